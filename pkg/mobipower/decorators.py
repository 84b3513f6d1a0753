import logging
from functools import wraps
from typing import Callable, Dict

import numpy as np

from mobipower.errors import AllocatorError
from mobipower.models import Algorithm

logger = logging.getLogger("mobipower")


class _AllocatorDecorator:
    def __init__(self):
        self.handlers: Dict[Algorithm, Callable] = {}

    def register(self, algorithm: Algorithm):
        def real_decorator(fn):
            @wraps(fn)
            def wrapper(gains: np.ndarray, pmax: float, noise: float, **kwargs):
                gains = np.asarray(gains, dtype=float)
                if gains.ndim != 2 or gains.shape[0] != gains.shape[1]:
                    raise AllocatorError(
                        f"{algorithm.value}: gains must be a square matrix, "
                        f"got {gains.shape}"
                    )
                if not np.all(np.isfinite(gains)):
                    raise AllocatorError(f"{algorithm.value}: non-finite gains")
                return fn(gains, pmax, noise, **kwargs)

            if algorithm in self.handlers:
                logger.info(f"Replacing allocator for {algorithm.value}")
            self.handlers[algorithm] = wrapper
            return wrapper

        return real_decorator

    def solve(self, algorithm, gains: np.ndarray, pmax: float, noise: float, **kwargs):
        try:
            handler = self.handlers[Algorithm(algorithm)]
        except (KeyError, ValueError):
            name = getattr(algorithm, "value", algorithm)
            raise AllocatorError(f"unknown allocator: {name}")

        logger.debug(f"Solving with {handler.__name__}")
        return handler(gains, pmax, noise, **kwargs)


_decorator = _AllocatorDecorator()

allocator = _decorator.register
solve = _decorator.solve
