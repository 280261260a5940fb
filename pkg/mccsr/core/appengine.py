"""Core processor of the application, runs the train, upscale, evaluate
and degrade commands and turns their failures into messages and exit
statuses."""

import logging

from .dictlearn import joint_dictionary_learning
from .dictstore import DictionaryBundle, load_dictionaries, save_dictionaries
from .errors import ColorSRError
from .images import read_png, write_png
from .metrics import evaluate_images
from .pipeline import (
    add_gaussian_noise,
    build_training_set,
    degrade,
    super_resolve_with_report,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

TRAINING_LOGGER = "mccsr.core.dictlearn"


class AppEngine:
    """
    Core application engine responsible for running commands.

    Each ``process_*`` method performs one command and leaves a
    human-readable ``message`` and an exit ``status`` behind; library errors
    never escape.
    """

    def __init__(self, threads=1):
        """
        Initialize the AppEngine.

        Args:
            threads (int, optional): Worker threads handed to the library.
        """
        self.threads = threads
        self.message = None
        self.status = None
        self.report = None

    def _fail(self, error):
        self.message = f"Error: {error}"
        self.status = EXIT_DATA
        logger.debug("command failed", exc_info=error)

    def process_train(self, run_config):
        """
        Train coupled dictionaries and write them to run_config.dictionary.

        Args:
            run_config (RunConfig): Images, dictionary path, optional log
                path and training parameters.

        Side Effects:
            - Writes the dictionary file.
            - Appends one ``iteration=<n> objective=<value>`` line per outer
              iteration to run_config.log when set.
            - Updates 'self.message' and 'self.status'.
        """
        handler = None
        training_logger = logging.getLogger(TRAINING_LOGGER)
        previous_level = training_logger.level
        previous_propagate = training_logger.propagate
        try:
            if not run_config.dictionary:
                raise ValueError("no dictionary output path configured")
            paths = run_config.image_paths()
            if not paths:
                raise ValueError("no training images configured")
            if run_config.log:
                handler = logging.FileHandler(run_config.log, mode="a")
                handler.setFormatter(logging.Formatter("%(message)s"))
                training_logger.addHandler(handler)
                training_logger.setLevel(logging.INFO)
                # Iteration records go to the log file only.
                training_logger.propagate = False

            sr_config = run_config.sr_config()
            images = [read_png(path) for path in paths]
            training_set = build_training_set(
                images, sr_config, run_config.samples, run_config.seed,
                run_config.variance_threshold,
            )
            result = joint_dictionary_learning(
                training_set, run_config.train_config(), self.threads
            )
            save_dictionaries(
                DictionaryBundle(result.d_l, result.d_h,
                                 sr_config.patch_side, sr_config.scale),
                run_config.dictionary,
            )
            self.report = result
            self.message = (
                f"Trained {run_config.atoms} atoms per channel on "
                f"{training_set.n} patch pairs from {len(images)} images; "
                f"final objective {result.objectives[-1]:.6g}.\n"
                f"Dictionary written to {run_config.dictionary}."
            )
            self.status = EXIT_OK
        except ValueError as e:
            self.message = f"Error: {e}"
            self.status = EXIT_USAGE
        except (ColorSRError, OSError) as e:
            self._fail(e)
        finally:
            if handler is not None:
                training_logger.removeHandler(handler)
                training_logger.setLevel(previous_level)
                training_logger.propagate = previous_propagate
                handler.close()

    def process_upscale(self, run_config, dictionary_path, input_path, output_path):
        """
        Super-resolve one image with trained dictionaries.

        Args:
            run_config (RunConfig): Reconstruction parameters.
            dictionary_path (str): Dictionary file to load.
            input_path (str): Low-resolution PNG.
            output_path (str): Where to write the result.

        Side Effects:
            - Writes the output PNG.
            - Updates 'self.message' with the beta histogram and mean tau.
        """
        try:
            sr_config = run_config.sr_config()
            bundle = load_dictionaries(dictionary_path)
            bundle.check_compatible(sr_config.patch_side, sr_config.scale)
            lr = read_png(input_path)
            image, report = super_resolve_with_report(
                lr, bundle.d_l, bundle.d_h, sr_config, self.threads
            )
            write_png(image, output_path)
            self.report = report
            lines = [f"Wrote {image.width}x{image.height} image to {output_path}."]
            lines.extend(report.summary_lines())
            self.message = "\n".join(lines)
            self.status = EXIT_OK
        except FileNotFoundError as e:
            self.message = f"Error: cannot read {e.filename}: {e.strerror}"
            self.status = EXIT_DATA
        except (ColorSRError, OSError) as e:
            self._fail(e)

    def process_evaluate(self, reference_path, test_path, samples_per_degree):
        """
        Compare a test image against its reference.

        Side Effects:
            - Updates 'self.message' with the machine-readable line followed
              by a human-readable block.
        """
        try:
            report = evaluate_images(
                read_png(reference_path), read_png(test_path), samples_per_degree
            )
            self.report = report
            self.message = f"{report.machine_line()}\n{report.text_block()}"
            self.status = EXIT_OK
        except (ColorSRError, OSError) as e:
            self._fail(e)

    def process_degrade(self, input_path, output_path, scale, noise_sigma=None, seed=0):
        """
        Write a bicubic-downsampled, optionally noisy copy of an image.

        Side Effects:
            - Writes the output PNG.
            - Updates 'self.message' and 'self.status'.
        """
        try:
            lr = degrade(read_png(input_path), scale)
            if noise_sigma:
                lr = add_gaussian_noise(lr, noise_sigma, seed)
            write_png(lr, output_path)
            self.message = f"Wrote {lr.width}x{lr.height} image to {output_path}."
            self.status = EXIT_OK
        except (ColorSRError, OSError) as e:
            self._fail(e)
