from __future__ import annotations

from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass
class Vocabulary:
    """Token <-> id mapping with pad/bos/eos/unk fixed at ids 0-3."""

    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        if list(self.tokens[:4]) != list(RESERVED):
            self.tokens = list(RESERVED) + [t for t in self.tokens if t not in RESERVED]
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    @classmethod
    def from_tokens(cls, tokens):
        seen = dict.fromkeys(t for t in tokens if t not in RESERVED)
        return cls(list(RESERVED) + list(seen))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i not in (PAD, BOS, EOS)]
