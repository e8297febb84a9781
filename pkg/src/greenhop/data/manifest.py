"""EchoNet-style dataset manifest (FileName, EF, Split columns)."""
import csv
import io
from dataclasses import dataclass
from pathlib import Path

from ..errors import FormatError, InvalidInput
from .atomic import atomic_write_text

SPLITS = ("TRAIN", "VAL", "TEST")
CLASSES = (1, 2, 3)


def ef_class(ef: float) -> int:
    """1: EF > 50, 2: 40 <= EF <= 50, 3: EF < 40."""
    if ef > 50:
        return 1
    if ef >= 40:
        return 2
    return 3


@dataclass(frozen=True)
class ManifestRow:
    file_name: str
    ef_percent: float
    split: str

    @property
    def label(self) -> int:
        return ef_class(self.ef_percent)


class Manifest:
    def __init__(self, rows):
        self.rows = list(rows)
        seen = set()
        for r in self.rows:
            if r.file_name in seen:
                raise InvalidInput(f"duplicate file name {r.file_name!r} in manifest")
            seen.add(r.file_name)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def split(self, name: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == name.upper()]

    def by_name(self) -> dict[str, ManifestRow]:
        return {r.file_name: r for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["FileName", "EF", "Split"])
        for r in self.rows:
            w.writerow([r.file_name, repr(float(r.ef_percent)), r.split])
        return buf.getvalue()

    def write(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def parse_manifest(csv_path) -> Manifest:
    path = Path(csv_path)
    if not path.exists():
        raise InvalidInput(f"manifest not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return parse_manifest_text(fh.read(), str(path))


def parse_manifest_text(text: str, name: str = "<manifest>") -> Manifest:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{name}: empty manifest") from None
    cols = {h.strip().lower(): i for i, h in enumerate(header)}
    missing = [c for c in ("filename", "ef", "split") if c not in cols]
    if missing:
        raise FormatError(f"{name}: missing column(s) {', '.join(missing)}")
    rows, seen = [], {}
    for n, rec in enumerate(reader, start=1):
        if not any(f.strip() for f in rec):
            continue
        where = f"{name}: row {n}"
        try:
            fname = rec[cols["filename"]].strip()
            ef_raw = rec[cols["ef"]].strip()
            split = rec[cols["split"]].strip().upper()
        except IndexError:
            raise FormatError(f"{where}: too few fields") from None
        if not fname:
            raise FormatError(f"{where}, column FileName: empty file name")
        try:
            ef = float(ef_raw)
        except ValueError:
            raise FormatError(f"{where}, column EF: not a number: {ef_raw!r}") from None
        if not 0.0 <= ef <= 100.0:
            raise FormatError(f"{where}, column EF: {ef} outside [0, 100]")
        if split not in SPLITS:
            raise FormatError(f"{where}, column Split: unknown split token {split!r}")
        if fname in seen:
            raise FormatError(f"{where}, column FileName: duplicate of row {seen[fname]} ({fname!r})")
        seen[fname] = n
        rows.append(ManifestRow(fname, ef, split))
    return Manifest(rows)
