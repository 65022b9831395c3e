"""File formats: corpus manifests, matrices, alignments, labels, lexicons,
phone maps, and the binary pool / dataset / checkpoint files.

Binary formats are little-endian, start with a 4-byte magic, and round-trip
bit-exactly. Text readers validate every line and report the line number.
"""

import hashlib
import io
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional, Union

import numpy as np

from .core import (
    Lexicon,
    LexiconEntry,
    PhoneAlignment,
    PhoneInventory,
    PhonePoolSet,
    Provenance,
    Quadruplet,
    Segment,
    UtteranceRecord,
    WordSample,
    find_phone,
    freeze,
    validate_utterance,
)
from .errors import (
    AlignmentError,
    DataValidationError,
    DimensionMismatchError,
    DuplicateKeyError,
    FormatError,
    ScoreRangeError,
)
from .gop import PhoneClassMap
from .scorer import ScorerConfig, ScorerModel

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

DATA_ROOT_ENV = "GMX_DATA_ROOT"
FORMAT_VERSION = 1

MATRIX_MAGIC = b"GMXF"
POOL_MAGIC = b"GMPL"
DATASET_MAGIC = b"GMDS"
CHECKPOINT_MAGIC = b"GMCK"

MAX_LABEL_SCORE = 10.0

_PROVENANCE_CODES = list(Provenance)
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


# ---------------------------------------------------------------------------
# Paths and hashes

def resolve_path(path: PathLike, base: Optional[PathLike] = None) -> Path:
    """Resolve a user path.

    Absolute paths are returned as-is. Relative paths are taken relative to
    ``base`` when given (manifest-relative paths), else prefixed with
    ``$GMX_DATA_ROOT`` when it is set.
    """
    p = Path(path)
    if p.is_absolute():
        return p
    if base is not None:
        return Path(base) / p
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) / p if root else p


def file_sha256(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(data: dict, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def sidecar_path(path: PathLike, suffix: str = ".json") -> Path:
    return Path(f"{path}{suffix}")


def _text_lines(path: PathLike) -> Iterator[tuple[int, list[str]]]:
    """Yield (line number, tab-separated fields) for non-blank, non-comment lines."""
    try:
        f = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"File not found: {path}") from None
    with f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


# ---------------------------------------------------------------------------
# Binary helpers

class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: bytes, path: PathLike):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.offset}, "
                f"file has {len(self.data)})"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return values if len(values) > 1 else values[0]

    def string(self) -> str:
        n = self.unpack("H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.path}: invalid UTF-8 string at offset {self.offset - n}") from None

    def array(self, dtype, shape: tuple[int, ...]) -> np.ndarray:
        dtype = np.dtype(dtype)
        count = math.prod(int(n) for n in shape)
        n_bytes = count * dtype.itemsize
        remaining = len(self.data) - self.offset
        if n_bytes > remaining:
            raise FormatError(
                f"{self.path}: truncated file, array of shape {tuple(shape)} at offset "
                f"{self.offset} needs {n_bytes} bytes, {remaining} remain"
            )
        raw = self.take(n_bytes)
        return freeze(np.frombuffer(raw, dtype=dtype, count=count).reshape(shape))

    def expect_magic(self, magic: bytes) -> None:
        if len(self.data) < len(magic):
            raise FormatError(f"{self.path}: truncated file (no magic)")
        if self.take(len(magic)) != magic:
            raise FormatError(f"{self.path}: bad magic, expected {magic!r}")

    def expect_version(self) -> int:
        version = self.unpack("I")
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.path}: unsupported format version {version}")
        return version

    def expect_end(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.offset} trailing bytes after payload"
            )


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"File not found: {path}") from None


def _pack_string(stream: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"String too long to serialize ({len(raw)} bytes)")
    stream.write(struct.pack("<H", len(raw)))
    stream.write(raw)


def _pack_f32(stream: BinaryIO, array: np.ndarray) -> None:
    stream.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _write_inventory(stream: BinaryIO, inventory: PhoneInventory) -> None:
    stream.write(struct.pack("<I", len(inventory)))
    for phone in inventory:
        _pack_string(stream, phone.symbol)


def _read_inventory(reader: _Reader) -> PhoneInventory:
    n = reader.unpack("I")
    try:
        return PhoneInventory(reader.string() for _ in range(n))
    except DataValidationError as e:
        raise FormatError(f"{reader.path}: bad phone inventory table: {e}") from e


# ---------------------------------------------------------------------------
# Matrices

def write_matrix(array: np.ndarray, path: PathLike) -> None:
    """Write a T x D matrix in the canonical binary GMXF format (f32)."""
    array = np.asarray(array)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise DimensionMismatchError(f"{path}: cannot write matrix of shape {array.shape}")
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<II", array.shape[0], array.shape[1]))
        _pack_f32(f, array)


def write_matrix_tsv(array: np.ndarray, path: PathLike) -> None:
    """Write a matrix as TSV text, one frame per line (float32 repr)."""
    array = np.asarray(array, dtype=np.float32)
    with open(path, "w", encoding="utf-8") as f:
        for row in array:
            f.write("\t".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a GMXF binary or TSV text matrix (auto-detected by magic).

    Returns:
        Read-only float32 array of shape (rows, cols).
    """
    data = _read_bytes(path)
    if data[:4] == MATRIX_MAGIC:
        reader = _Reader(data, path)
        reader.expect_magic(MATRIX_MAGIC)
        rows, cols = reader.unpack("II")
        if rows < 1 or cols < 1:
            raise DimensionMismatchError(f"{path}: invalid matrix dimensions {rows}x{cols}")
        expected = rows * cols * 4
        remaining = len(data) - reader.offset
        if remaining < expected:
            raise FormatError(f"{path}: truncated file ({remaining} of {expected} data bytes)")
        if remaining > expected:
            raise FormatError(
                f"{path}: dimension header mismatch ({rows}x{cols} header, {remaining} data bytes)"
            )
        return reader.array("<f4", (rows, cols)).astype(np.float32, copy=False)
    return _read_matrix_tsv(data, path)


def _read_matrix_tsv(data: bytes, path: PathLike) -> np.ndarray:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither a GMXF matrix nor UTF-8 text") from None
    rows: list[list[float]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cells = line.split()
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric cell") from None
        if rows and len(values) != len(rows[0]):
            raise FormatError(
                f"{path}: line {lineno}: ragged row with {len(values)} columns, expected {len(rows[0])}"
            )
        rows.append(values)
    if not rows:
        raise DimensionMismatchError(f"{path}: invalid matrix dimensions 0x0")
    return freeze(np.array(rows, dtype=np.float32))


# ---------------------------------------------------------------------------
# Corpus manifest

MANIFEST_FIELDS = ("utt_id", "mfcc", "deep", "post", "align", "text")


@dataclass(frozen=True)
class UtteranceDescriptor:
    """One manifest line: file paths (resolved) plus transcript."""
    utt_id: str
    mfcc: Path
    deep: Path
    post: Path
    align: Path
    text: tuple[str, ...]
    line: int = 0


def read_manifest(path: PathLike) -> list[UtteranceDescriptor]:
    """Parse a JSON-lines corpus manifest.

    Paths inside the manifest are relative to the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    seen: dict[str, int] = {}
    result = []
    try:
        f = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"Manifest not found: {path}") from None
    with f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(item, dict):
                raise FormatError(f"{path}: line {lineno}: expected a JSON object")
            missing = [k for k in MANIFEST_FIELDS if k not in item]
            if missing:
                raise FormatError(f"{path}: line {lineno}: missing field(s) {', '.join(missing)}")
            utt_id = str(item["utt_id"])
            if utt_id in seen:
                raise DuplicateKeyError(
                    f"{path}: duplicate utt_id {utt_id!r} on lines {seen[utt_id]} and {lineno}"
                )
            seen[utt_id] = lineno
            text = item["text"]
            words = tuple(text.split()) if isinstance(text, str) else tuple(str(w) for w in text)
            result.append(UtteranceDescriptor(
                utt_id=utt_id,
                mfcc=resolve_path(item["mfcc"], base),
                deep=resolve_path(item["deep"], base),
                post=resolve_path(item["post"], base),
                align=resolve_path(item["align"], base),
                text=words,
                line=lineno,
            ))
    return result


def write_manifest(descriptors: Iterable[UtteranceDescriptor], path: PathLike) -> None:
    """Write a manifest with paths relative to its own directory where possible."""
    base = Path(path).parent.resolve()

    def rel(p: Path) -> str:
        try:
            return Path(p).resolve().relative_to(base).as_posix()
        except ValueError:
            return str(Path(p).resolve())

    with open(path, "w", encoding="utf-8") as f:
        for d in descriptors:
            f.write(json.dumps({
                "utt_id": d.utt_id,
                "mfcc": rel(d.mfcc),
                "deep": rel(d.deep),
                "post": rel(d.post),
                "align": rel(d.align),
                "text": " ".join(d.text),
            }) + "\n")


class CorpusLoader:
    """Loads manifest descriptors into validated utterance records.

    Alignment files are parsed once and cached per path.
    """

    def __init__(self, inventory: PhoneInventory):
        self.inventory = inventory
        self._alignments: dict[Path, dict[str, PhoneAlignment]] = {}

    def alignment_for(self, desc: UtteranceDescriptor) -> PhoneAlignment:
        if desc.align not in self._alignments:
            self._alignments[desc.align] = read_alignment(desc.align, self.inventory)
        table = self._alignments[desc.align]
        if desc.utt_id not in table:
            raise AlignmentError(f"{desc.utt_id}: no alignment in {desc.align}")
        return table[desc.utt_id]

    def load(self, desc: UtteranceDescriptor) -> UtteranceRecord:
        matrices = {}
        for name in ("mfcc", "deep", "post"):
            p = getattr(desc, name)
            if not Path(p).exists():
                raise FormatError(f"{desc.utt_id}: {name} file not found: {p}")
            try:
                matrices[name] = read_matrix(p)
            except DataValidationError as e:
                raise type(e)(f"{desc.utt_id}: {name}: {e}") from e
        rec = UtteranceRecord(
            utt_id=desc.utt_id,
            mfcc=matrices["mfcc"],
            deep=matrices["deep"],
            post=matrices["post"],
            align=self.alignment_for(desc),
            text=desc.text,
        )
        return validate_utterance(rec)

    def iter_records(self, descriptors: Iterable[UtteranceDescriptor]) -> Iterator[UtteranceRecord]:
        for desc in descriptors:
            yield self.load(desc)


# ---------------------------------------------------------------------------
# Alignments

def read_alignment(path: PathLike, inventory: PhoneInventory) -> dict[str, PhoneAlignment]:
    """Read a frame-index alignment TSV: ``utt_id, phone, start_frame, end_frame``.

    Returns:
        Alignments keyed by utterance id, in first-appearance order.
    """
    grouped: dict[str, list[Segment]] = {}
    for lineno, fields in _text_lines(path):
        if len(fields) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 fields, got {len(fields)}")
        utt_id, symbol, start, end = fields
        phone = find_phone(inventory, symbol, f"{path}: line {lineno}")
        try:
            start_frame, end_frame = int(start), int(end)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-integer frame index") from None
        try:
            seg = Segment(phone, start_frame, end_frame)
        except AlignmentError as e:
            raise AlignmentError(f"{path}: line {lineno}: {utt_id}: {e}") from None
        grouped.setdefault(utt_id, []).append(seg)
    return {utt: PhoneAlignment(tuple(segs), utt_id=utt) for utt, segs in grouped.items()}


def write_alignment(alignments: dict[str, PhoneAlignment], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, align in alignments.items():
            for seg in align:
                f.write(f"{utt_id}\t{seg.phone.symbol}\t{seg.start}\t{seg.end}\n")


def read_ctm_alignment(path: PathLike, inventory: PhoneInventory,
                       hop: float = 0.010) -> dict[str, PhoneAlignment]:
    """Read a CTM phone alignment (``utt channel start dur phone [conf]``, seconds).

    Start frames are floored and end frames ceiled at the given hop; a 1e-6
    frame tolerance absorbs float error in the seconds values.
    """
    grouped: dict[str, list[Segment]] = {}
    for lineno, fields in _text_lines(path):
        fields = fields[0].split() if len(fields) == 1 else fields
        if len(fields) not in (5, 6):
            raise FormatError(f"{path}: line {lineno}: expected 5 or 6 CTM fields, got {len(fields)}")
        utt_id, _channel, start, dur, symbol = fields[:5]
        phone = find_phone(inventory, symbol, f"{path}: line {lineno}")
        try:
            start_s, dur_s = float(start), float(dur)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric time") from None
        start_frame = math.floor(start_s / hop + 1e-6)
        end_frame = math.ceil((start_s + dur_s) / hop - 1e-6)
        try:
            seg = Segment(phone, start_frame, end_frame)
        except AlignmentError as e:
            raise AlignmentError(f"{path}: line {lineno}: {utt_id}: {e}") from None
        grouped.setdefault(utt_id, []).append(seg)
    return {utt: PhoneAlignment(tuple(segs), utt_id=utt) for utt, segs in grouped.items()}


# ---------------------------------------------------------------------------
# Labels, lexicon, phone map

@dataclass(frozen=True)
class WordLabel:
    word: str
    score: float


def read_labels(path: PathLike) -> dict[tuple[str, int], WordLabel]:
    """Read human word scores: ``utt_id, word_index, word, score`` (0-10)."""
    labels: dict[tuple[str, int], WordLabel] = {}
    lines: dict[tuple[str, int], int] = {}
    for lineno, fields in _text_lines(path):
        if len(fields) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 fields, got {len(fields)}")
        utt_id, index, word, score = fields
        try:
            key = (utt_id, int(index))
            value = float(score)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: bad word index or score") from None
        if not 0.0 <= value <= MAX_LABEL_SCORE:
            raise ScoreRangeError(f"{path}: line {lineno}: score {value} outside [0, {MAX_LABEL_SCORE:g}]")
        if key in labels:
            raise DuplicateKeyError(
                f"{path}: duplicate label for {utt_id} word {key[1]} on lines {lines[key]} and {lineno}"
            )
        labels[key] = WordLabel(word, value)
        lines[key] = lineno
    return labels


def write_labels(labels: dict[tuple[str, int], WordLabel], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for (utt_id, index), label in labels.items():
            f.write(f"{utt_id}\t{index}\t{label.word}\t{label.score!r}\n")


def read_phone_class_map(path: PathLike) -> tuple[PhoneInventory, PhoneClassMap]:
    """Read ``PHONE<TAB>c1,c2,...``; the phone inventory follows file order."""
    symbols: list[str] = []
    classes: list[list[int]] = []
    for lineno, fields in _text_lines(path):
        if len(fields) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 2 fields, got {len(fields)}")
        symbol, cells = fields
        try:
            indices = [int(c) for c in cells.split(",") if c.strip()]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-integer class index") from None
        if not indices:
            raise FormatError(f"{path}: line {lineno}: phone {symbol} has no classes")
        if symbol in symbols:
            raise DuplicateKeyError(f"{path}: line {lineno}: duplicate phone {symbol}")
        symbols.append(symbol)
        classes.append(indices)
    inventory = PhoneInventory(symbols)
    return inventory, PhoneClassMap({inventory[s]: c for s, c in zip(symbols, classes)})


def write_phone_class_map(class_map: PhoneClassMap, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for phone in sorted(class_map.phones(), key=lambda p: p.index):
            f.write(f"{phone.symbol}\t{','.join(str(int(c)) for c in class_map.classes(phone))}\n")


def read_lexicon(path: PathLike, inventory: PhoneInventory) -> Lexicon:
    """Read ``WORD<TAB>phones<TAB>frequency``; unseen phones are an error."""
    entries: dict[str, LexiconEntry] = {}
    for lineno, fields in _text_lines(path):
        if len(fields) != 3:
            raise FormatError(f"{path}: line {lineno}: expected 3 fields, got {len(fields)}")
        word, phones, freq = fields
        if word in entries:
            raise DuplicateKeyError(f"{path}: line {lineno}: duplicate word {word!r}")
        symbols = phones.split()
        if not symbols:
            raise FormatError(f"{path}: line {lineno}: word {word!r} has no phones")
        seq = tuple(find_phone(inventory, s, f"{path}: line {lineno}") for s in symbols)
        try:
            frequency = int(freq)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-integer frequency") from None
        if frequency < 1:
            raise ScoreRangeError(f"{path}: line {lineno}: frequency {frequency} < 1")
        entries[word] = LexiconEntry(seq, frequency)
    return Lexicon(entries)


def lexicon_text(lexicon: Lexicon) -> str:
    return "".join(
        f"{word}\t{' '.join(p.symbol for p in e.phones)}\t{e.frequency}\n"
        for word, e in lexicon.entries.items()
    )


def write_lexicon(lexicon: Lexicon, path: PathLike) -> None:
    Path(path).write_text(lexicon_text(lexicon), encoding="utf-8")


def lexicon_digest(lexicon: Lexicon) -> str:
    return hashlib.sha256(lexicon_text(lexicon).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Pool files

def _encode_pool(pools: PhonePoolSet, stream: BinaryIO) -> dict[str, dict[str, int]]:
    stream.write(POOL_MAGIC)
    stream.write(struct.pack("<I", FORMAT_VERSION))
    _write_inventory(stream, pools.inventory)
    index = {}
    for phone in pools.inventory:
        items = pools.pool(phone) if pools.has(phone) else []
        index[phone.symbol] = {"offset": stream.tell(), "count": len(items)}
        stream.write(struct.pack("<Q", len(items)))
        for q in items:
            stream.write(struct.pack("<III", q.n_frames, q.mfcc_seg.shape[1], q.deep_seg.shape[1]))
            _pack_f32(stream, q.mfcc_seg)
            _pack_f32(stream, q.deep_seg)
            stream.write(struct.pack("<d", q.gop))
    return index


def pool_digest(pools: PhonePoolSet) -> str:
    """SHA-256 of the pool's canonical serialization."""
    buf = io.BytesIO()
    _encode_pool(pools, buf)
    return hashlib.sha256(buf.getvalue()).hexdigest()


def write_pool(pools: PhonePoolSet, path: PathLike) -> None:
    """Write a GMPL pool file plus a ``.index.json`` sidecar of per-phone offsets."""
    with open(path, "wb") as f:
        index = _encode_pool(pools, f)
    write_json({
        "format": POOL_MAGIC.decode(),
        "version": FORMAT_VERSION,
        "phones": index,
        "sha256": file_sha256(path),
    }, sidecar_path(path, ".index.json"))


def read_pool(path: PathLike) -> PhonePoolSet:
    reader = _Reader(_read_bytes(path), path)
    reader.expect_magic(POOL_MAGIC)
    reader.expect_version()
    inventory = _read_inventory(reader)
    pools = PhonePoolSet(inventory)
    for phone in inventory:
        count = reader.unpack("Q")
        for _ in range(count):
            n_frames, d_mfcc, d_deep = reader.unpack("III")
            if n_frames < 1 or d_mfcc < 1 or d_deep < 1:
                raise FormatError(f"{path}: invalid quadruplet header {n_frames}x{d_mfcc}/{d_deep}")
            mfcc = reader.array("<f4", (n_frames, d_mfcc))
            deep = reader.array("<f4", (n_frames, d_deep))
            gop = reader.unpack("d")
            try:
                pools.append(Quadruplet(phone, mfcc, deep, gop))
            except DataValidationError as e:
                raise FormatError(f"{path}: bad quadruplet for {phone}: {e}") from e
    reader.expect_end()
    return pools


# ---------------------------------------------------------------------------
# Dataset files

def write_dataset(samples: list[WordSample], inventory: PhoneInventory, path: PathLike,
                  manifest: Optional[dict] = None) -> None:
    """Write a GMDS dataset file; ``manifest`` goes to a ``.json`` sidecar."""
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_inventory(f, inventory)
        f.write(struct.pack("<Q", len(samples)))
        for s in samples:
            f.write(struct.pack("<B", _PROVENANCE_CODES.index(s.provenance)))
            _pack_string(f, s.word)
            _pack_string(f, s.utt_id)
            f.write(struct.pack("<id", s.word_index, s.target))
            f.write(struct.pack("<I", len(s.segment_lengths)))
            f.write(np.asarray(s.segment_lengths, dtype="<u4").tobytes())
            f.write(struct.pack("<III", s.n_frames, s.mfcc.shape[1], s.deep.shape[1]))
            f.write(np.asarray(s.phone_indices, dtype="<u4").tobytes())
            _pack_f32(f, s.mfcc)
            _pack_f32(f, s.deep)
    if manifest is not None:
        write_json(manifest, sidecar_path(path))


def read_dataset(path: PathLike) -> tuple[list[WordSample], PhoneInventory]:
    reader = _Reader(_read_bytes(path), path)
    reader.expect_magic(DATASET_MAGIC)
    reader.expect_version()
    inventory = _read_inventory(reader)
    phone_table = list(inventory)
    count = reader.unpack("Q")
    samples = []
    for i in range(count):
        code = reader.unpack("B")
        if code >= len(_PROVENANCE_CODES):
            raise FormatError(f"{path}: sample {i}: unknown provenance code {code}")
        word = reader.string()
        utt_id = reader.string()
        word_index, target = reader.unpack("id")
        n_segments = reader.unpack("I")
        lengths = tuple(int(n) for n in reader.array("<u4", (n_segments,)))
        n_frames, d_mfcc, d_deep = reader.unpack("III")
        if n_frames < 1 or d_mfcc < 1 or d_deep < 1:
            raise FormatError(f"{path}: sample {i}: invalid header {n_frames}x{d_mfcc}/{d_deep}")
        indices = reader.array("<u4", (n_frames,))
        if int(indices.max()) >= len(phone_table):
            raise FormatError(f"{path}: sample {i}: phone index {int(indices.max())} out of range")
        phones = tuple(map(phone_table.__getitem__, indices.tolist()))
        mfcc = reader.array("<f4", (n_frames, d_mfcc))
        deep = reader.array("<f4", (n_frames, d_deep))
        try:
            samples.append(WordSample(
                word=word, phones_per_frame=phones, mfcc=mfcc, deep=deep, target=target,
                provenance=_PROVENANCE_CODES[code], utt_id=utt_id, word_index=word_index,
                segment_lengths=lengths,
            ))
        except DataValidationError as e:
            raise FormatError(f"{path}: sample {i}: {e}") from e
    reader.expect_end()
    return samples, inventory


# ---------------------------------------------------------------------------
# Checkpoints

def write_checkpoint(model: ScorerModel, path: PathLike, manifest: Optional[dict] = None) -> None:
    """Write a GMCK checkpoint.

    Layout: magic, version u32, config JSON (u32 length + bytes), tensor count
    u32, then per tensor in ``model.tensors()`` order: name, dtype code
    u8 (0=f32, 1=f64), ndim u32, dims u32..., raw little-endian data.
    """
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    tensors = model.tensors()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(config)))
        f.write(config)
        f.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            code = 1 if array.dtype == np.float64 else 0
            _pack_string(f, name)
            f.write(struct.pack("<BI", code, array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes())
    if manifest is not None:
        write_json(manifest, sidecar_path(path))


def read_checkpoint(path: PathLike) -> ScorerModel:
    reader = _Reader(_read_bytes(path), path)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version()
    n = reader.unpack("I")
    try:
        config = ScorerConfig.from_dict(json.loads(reader.take(n).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"{path}: unreadable config blob: {e}") from None
    count = reader.unpack("I")
    tensors = {}
    for _ in range(count):
        name = reader.string()
        code, ndim = reader.unpack("BI")
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: tensor {name}: unknown dtype code {code}")
        shape = tuple(reader.unpack(f"{ndim}I")) if ndim > 1 else ((reader.unpack("I"),) if ndim else ())
        tensors[name] = reader.array(_DTYPE_CODES[code], shape).copy()
    reader.expect_end()
    try:
        return ScorerModel.from_tensors(config, tensors)
    except DataValidationError as e:
        raise FormatError(f"{path}: {e}") from e
