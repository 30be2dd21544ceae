from dataclasses import dataclass

import numpy as np

_U64 = 2**64


@dataclass(frozen=True)
class RngSeed:
    """(seed, stream) pair keying one counter-based Philox generator."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < _U64 and 0 <= self.stream < _U64):
            raise ValueError("seed and stream must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(sequence))

    def replica(self, index: int) -> "RngSeed":
        """Seed for replica `index`: consecutive stream ids."""
        return RngSeed(self.seed, (self.stream + index) % _U64)

    def child(self, offset: int) -> "RngSeed":
        """Independent sub-stream, used for auxiliary draws inside one replica."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream, offset))
        return RngSeed(int(sequence.generate_state(1, np.uint64)[0]), offset)
