import numpy as np

CONCERNS = (
    "placement",
    "mobility",
    "shadowing",
    "fading",
    "exploration",
    "replay",
    "init",
    "baseline",
)


class RandomStreams:
    """
    One independent generator per concern, all derived from a single seed, so
    that re-seeding or consuming one concern never shifts another.
    """

    seed: int

    def __init__(self, seed: int):
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(len(CONCERNS))
        self._generators = {
            name: np.random.default_rng(child)
            for name, child in zip(CONCERNS, children)
        }

    def __getattr__(self, name: str) -> np.random.Generator:
        try:
            return self.__dict__["_generators"][name]
        except KeyError:
            raise AttributeError(name)
