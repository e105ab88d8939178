"""Counter-based seed fan-out: every named stream is keyed by (root seed, stream id)."""

import zlib

import numpy as np


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(root: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(root), spawn_key=(stream_id(name),))))


def sub_seed(root: int, name: str) -> int:
    return int(np.random.SeedSequence(entropy=int(root), spawn_key=(stream_id(name),)).generate_state(1)[0])
