"""CLI interface for training dictionaries and super-resolving images.

Usage:
  mccsr train <config> [--dictionary=<path>] [--log=<path>] [--atoms=<k>]
              [--samples=<n>] [--scale=<s>] [--seed=<n>] [--threads=<n>] [-v]
  mccsr upscale <dictionary> <input> <output> [--config=<path>] [--scale=<s>]
                [--lambda=<v>] [--tau-max=<v>] [--noise-sigma=<v>]
                [--force-tau=<v>] [--threads=<n>] [-v]
  mccsr evaluate <reference> <test> [--samples-per-degree=<v>] [-v]
  mccsr degrade <input> <output> [--scale=<s>] [--noise-sigma=<v>] [--seed=<n>] [-v]
  mccsr (-h | --help)

Options:
  --config=<path>            Flat key = value configuration file.
  --dictionary=<path>        Dictionary file to write.
  --log=<path>               Append per-iteration objectives to this file.
  --atoms=<k>                Atoms per channel.
  --samples=<n>              Number of training patch pairs.
  --scale=<s>                Magnification factor (2, 3 or 4).
  --seed=<n>                 Random seed.
  --threads=<n>              Worker threads (else MCCSR_THREADS, else CPU count).
  --lambda=<v>               Sparsity weight.
  --tau-max=<v>              Largest cross-channel weight.
  --noise-sigma=<v>          Gaussian noise standard deviation.
  --force-tau=<v>            Use one cross-channel weight for every patch.
  --samples-per-degree=<v>   S-CIELAB viewing resolution [default: 23].
  -v --verbose               Log progress.
  -h --help                  Show this screen.
"""

import logging
import sys

from docopt import DocoptExit, docopt
from environs import EnvError
from marshmallow import ValidationError

from mccsr.core.appengine import EXIT_DATA, EXIT_OK, EXIT_USAGE, AppEngine
from mccsr.core.settings import load_run_config, resolve_threads

logger = logging.getLogger(__name__)

# docopt option -> RunConfig key
_OVERRIDES = {
    "--dictionary": "dictionary",
    "--log": "log",
    "--atoms": "atoms",
    "--samples": "samples",
    "--scale": "scale",
    "--seed": "seed",
    "--threads": "threads",
    "--lambda": "lam",
    "--tau-max": "tau_max",
    "--noise-sigma": "noise_sigma",
    "--force-tau": "force_tau",
}


class AppCLI:
    """Main command-line interface for application."""

    def __init__(self):
        self.app_engine = None

    def run(self, argv=None):
        """
        Parse arguments, execute one command and print its message.

        Args:
            argv (list[str], optional): Arguments without the program name.

        Returns:
            int: 0 on success, 1 on a usage error, 2 on a data or format
            error.
        """
        try:
            args = docopt(__doc__, argv=argv)
        except DocoptExit as e:
            print(e, file=sys.stderr)
            return EXIT_USAGE
        except SystemExit:
            return EXIT_OK

        logging.basicConfig(
            level=logging.INFO if args["--verbose"] else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        try:
            return self.execute_command(args)
        except (ValidationError, EnvError) as e:
            print(f"Invalid configuration: {e}", file=sys.stderr)
            return EXIT_USAGE
        except OSError as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_DATA

    def execute_command(self, args):
        """Dispatch parsed arguments to the engine and report the outcome."""
        overrides = {
            key: args[option] for option, key in _OVERRIDES.items()
            if args.get(option) is not None
        }
        if args["train"]:
            run_config = load_run_config(args["<config>"], overrides)
            self.app_engine = AppEngine(resolve_threads(run_config.threads))
            self.app_engine.process_train(run_config)
        elif args["upscale"]:
            run_config = load_run_config(args["--config"], overrides)
            self.app_engine = AppEngine(resolve_threads(run_config.threads))
            self.app_engine.process_upscale(
                run_config, args["<dictionary>"], args["<input>"], args["<output>"]
            )
        elif args["evaluate"]:
            run_config = load_run_config(
                None, {"samples_per_degree": args["--samples-per-degree"]}
            )
            self.app_engine = AppEngine()
            self.app_engine.process_evaluate(
                args["<reference>"], args["<test>"], run_config.samples_per_degree
            )
        else:
            run_config = load_run_config(None, overrides)
            self.app_engine = AppEngine()
            self.app_engine.process_degrade(
                args["<input>"], args["<output>"], run_config.scale,
                run_config.noise_sigma, run_config.seed,
            )
        stream = sys.stdout if self.app_engine.status == EXIT_OK else sys.stderr
        print(self.app_engine.message, file=stream)
        return self.app_engine.status


def main():
    """Console-script entry point."""
    sys.exit(AppCLI().run())


if __name__ == "__main__":
    main()
