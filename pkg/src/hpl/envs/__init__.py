"""Task environments: tube navigation, curvilinear racing, Flappy Bird."""

from hpl.envs import flappy, track, tube
from hpl.envs.base import Env
from hpl.envs.flappy import FlappyEnv
from hpl.envs.track import TrackEnv
from hpl.envs.tube import TubeEnv

FAMILIES = {"tube": TubeEnv, "track": TrackEnv, "flappy": FlappyEnv}


def generate_tasks(family: str, n: int, seed: int, **kwargs) -> list[Env]:
    """Seeded, reproducible task instances of one family."""
    if family == "tube":
        if kwargs.pop("sharp", False):
            return tube.sharp_curve_tubes(n, seed)
        return tube.generate(n, seed, **kwargs)
    if family == "track":
        return track.generate(n, seed, **kwargs)
    if family == "flappy":
        return flappy.generate(n, seed, **kwargs)
    raise ValueError(f"unknown environment family {family!r}")


def env_from_dict(doc: dict) -> Env:
    try:
        cls = FAMILIES[doc["family"]]
    except KeyError as exc:
        raise ValueError(f"unknown environment document: {doc.get('family')!r}") from exc
    return cls.from_dict(doc)


__all__ = ["Env", "TubeEnv", "TrackEnv", "FlappyEnv", "FAMILIES", "generate_tasks", "env_from_dict"]
