from importlib import import_module
from pathlib import Path
from pkgutil import walk_packages
from typing import List

from . import baselines
from .decorators import allocator, solve
from .models import Algorithm, RunConfig, load_config
from .orchestrator import evaluate_policy, run_allocator, run_episode_schedule

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "allocator",
    "baselines",
    "evaluate_policy",
    "load_allocators",
    "load_config",
    "run_allocator",
    "run_episode_schedule",
    "RunConfig",
    "solve",
]

_imported_modules = []


def _import_module(module: str) -> List[str]:
    imported = import_module(module)
    if not hasattr(imported, "__path__"):
        return [imported.__name__]

    package_dir = Path(imported.__file__).resolve().parent

    imported_modules = [imported.__name__]
    for _, module_name, is_package in walk_packages([str(package_dir)]):
        module_to_be_imported = f"{module}.{module_name}"
        if is_package:
            imported_modules.extend(_import_module(module_to_be_imported))
        else:
            imported_modules.append(import_module(module_to_be_imported).__name__)
    return imported_modules


def load_allocators(modules: List[str]):
    """
    Imports the given modules (recursively for packages) so that their `@allocator`
    registrations take effect. A later registration for the same algorithm replaces
    the built-in one.

    @param modules Absolute module names, e.g. "my_project.allocators"
    """
    global _imported_modules

    for module in modules:
        _imported_modules.extend(_import_module(module))
