"""Place-name and entity normalization shared by rewards and evaluation."""

from __future__ import annotations

import unicodedata
from importlib import resources
from pathlib import Path

UNKNOWN = "unknown"


def normalize_text(text: str) -> str:
    """Lowercase, strip diacritics, trim and collapse internal whitespace."""
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return " ".join(stripped.casefold().split())


class NameNormalizer:
    """Normalizes names and resolves aliases to a canonical spelling.

    Alias keys and targets are normalized on load, so lookups are insensitive
    to case, accents and spacing.
    """

    def __init__(self, aliases: dict[str, str] | None = None):
        self.aliases: dict[str, str] = {}
        for alias, canonical in (aliases or {}).items():
            self.aliases[normalize_text(alias)] = normalize_text(canonical)

    def __call__(self, name: str | None) -> str:
        if name is None:
            return UNKNOWN
        key = normalize_text(name)
        if not key:
            return UNKNOWN
        return self.aliases.get(key, key)

    def same(self, a: str | None, b: str | None) -> bool:
        """Equality after normalization; unknown never matches anything."""
        na, nb = self(a), self(b)
        return na != UNKNOWN and nb != UNKNOWN and na == nb

    @classmethod
    def from_file(cls, path: str | Path) -> "NameNormalizer":
        return cls(_parse_alias_lines(Path(path).read_text(encoding="utf-8").splitlines()))

    @classmethod
    def default(cls) -> "NameNormalizer":
        text = resources.files("geoadapt").joinpath("data/aliases.tsv").read_text(encoding="utf-8")
        return cls(_parse_alias_lines(text.splitlines()))


def _parse_alias_lines(lines) -> dict[str, str]:
    aliases = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"alias table line {lineno}: expected 'alias<TAB>canonical'")
        aliases[parts[0]] = parts[1]
    return aliases
