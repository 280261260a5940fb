import numpy as np
from mccsr.core.dictlearn import TrainConfig, joint_dictionary_learning
from mccsr.core.images import PlanarImage
from mccsr.core.metrics import evaluate_images
from mccsr.core.pipeline import SrConfig, build_training_set, degrade, super_resolve
from mccsr.core.solver import SolverConfig


def scene(size, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    planes = np.stack([60.0 + 100.0 * xx / size + 20.0 * c for c in range(3)])
    for _ in range(8):
        color = rng.uniform(20.0, 235.0, size=3)
        top, left = rng.integers(0, size - 8, size=2)
        height, width = rng.integers(6, size // 2, size=2)
        planes[:, top:top + height, left:left + width] = color[:, None, None]
    return PlanarImage(planes)


if __name__ == '__main__':
    # usage example
    sr_config = SrConfig(scale=2, solver=SolverConfig(max_iterations=200))
    training_set = build_training_set(
        [scene(64, seed) for seed in range(4)], sr_config, count=1500
    )
    result = joint_dictionary_learning(
        training_set, TrainConfig(atoms=32, outer_iterations=5)
    )
    hr = scene(48, 99)
    lr = degrade(hr, sr_config.scale)
    upscaled = super_resolve(lr, result.d_l, result.d_h, sr_config)
    print(evaluate_images(hr, upscaled).machine_line())
