from __future__ import annotations

import hashlib
from dataclasses import dataclass


@dataclass(frozen=True)
class FileManifest:
    name: str
    digest: bytes  # SHA-1 of the whole file
    size: int
    chunk_size: int

    @property
    def chunk_count(self) -> int:
        return -(-self.size // self.chunk_size) if self.size else 0

    @classmethod
    def for_content(cls, name: str, data: bytes, chunk_size: int) -> "FileManifest":
        return cls(name, hashlib.sha1(data).digest(), len(data), chunk_size)

    def to_dict(self) -> dict:
        return {"name": self.name, "digest": self.digest.hex(), "size": self.size,
                "chunk_size": self.chunk_size, "chunk_count": self.chunk_count}


def split_chunks(data: bytes, chunk_size: int) -> list:
    return [data[i : i + chunk_size] for i in range(0, len(data), chunk_size)]
