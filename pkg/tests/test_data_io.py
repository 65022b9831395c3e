"""Tests for file formats and corpus loading."""

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from src.core import Provenance
from src.data_io import (
    CorpusLoader,
    FORMAT_VERSION,
    POOL_MAGIC,
    UtteranceDescriptor,
    WordLabel,
    read_alignment,
    read_checkpoint,
    read_ctm_alignment,
    read_dataset,
    read_labels,
    read_lexicon,
    read_manifest,
    read_matrix,
    read_phone_class_map,
    read_pool,
    resolve_path,
    write_alignment,
    write_checkpoint,
    write_dataset,
    write_labels,
    write_lexicon,
    write_manifest,
    write_matrix,
    write_matrix_tsv,
    write_phone_class_map,
    write_pool,
)
from src.errors import (
    AlignmentError,
    DimensionMismatchError,
    DuplicateKeyError,
    FormatError,
    RowSumError,
    ScoreRangeError,
    UnknownPhoneError,
)
from src.scorer import init_model, predict
from tests.conftest import make_record, make_sample, make_samples, tiny_config


def _write_corpus(tmp_path, records, class_map):
    """Write records as matrices + alignment + manifest; return the manifest path."""
    feats = tmp_path / "feats"
    feats.mkdir()
    descriptors = []
    for rec in records:
        for name in ("mfcc", "deep", "post"):
            write_matrix(getattr(rec, name), feats / f"{rec.utt_id}.{name}.gmx")
        descriptors.append(UtteranceDescriptor(
            rec.utt_id, feats / f"{rec.utt_id}.mfcc.gmx", feats / f"{rec.utt_id}.deep.gmx",
            feats / f"{rec.utt_id}.post.gmx", tmp_path / "align.tsv", rec.text,
        ))
    write_alignment({r.utt_id: r.align for r in records}, tmp_path / "align.tsv")
    write_phone_class_map(class_map, tmp_path / "phones.tsv")
    write_manifest(descriptors, tmp_path / "manifest.jsonl")
    return tmp_path / "manifest.jsonl"


class TestMatrix:
    """Tests for GMXF and TSV matrices."""

    def test_binary_round_trip(self, tmp_path):
        """GMXF preserves float32 values bit-exactly."""
        data = np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32)
        write_matrix(data, tmp_path / "m.gmx")
        np.testing.assert_array_equal(read_matrix(tmp_path / "m.gmx"), data)

    def test_layout(self, tmp_path):
        """Magic, rows, cols, then row-major little-endian float32."""
        write_matrix(np.array([[1.0, 2.0]]), tmp_path / "m.gmx")
        raw = (tmp_path / "m.gmx").read_bytes()
        assert raw[:4] == b"GMXF"
        assert struct.unpack("<II", raw[4:12]) == (1, 2)
        assert struct.unpack("<2f", raw[12:]) == (1.0, 2.0)

    def test_tsv(self, tmp_path):
        """Text matrices are detected and parsed."""
        data = np.array([[0.5, 1.5], [2.0, -1.0]], dtype=np.float32)
        write_matrix_tsv(data, tmp_path / "m.tsv")
        np.testing.assert_array_equal(read_matrix(tmp_path / "m.tsv"), data)

    def test_truncated(self, tmp_path):
        """Missing data bytes are a format error."""
        write_matrix(np.ones((4, 4)), tmp_path / "m.gmx")
        raw = (tmp_path / "m.gmx").read_bytes()
        (tmp_path / "m.gmx").write_bytes(raw[:-5])
        with pytest.raises(FormatError, match="truncated"):
            read_matrix(tmp_path / "m.gmx")

    def test_header_mismatch(self, tmp_path):
        """Extra data bytes contradict the header."""
        write_matrix(np.ones((2, 2)), tmp_path / "m.gmx")
        with open(tmp_path / "m.gmx", "ab") as f:
            f.write(b"\0" * 4)
        with pytest.raises(FormatError, match="header"):
            read_matrix(tmp_path / "m.gmx")

    def test_zero_dimension(self, tmp_path):
        """A 0-row header is a dimension error."""
        (tmp_path / "m.gmx").write_bytes(b"GMXF" + struct.pack("<II", 0, 3))
        with pytest.raises(DimensionMismatchError):
            read_matrix(tmp_path / "m.gmx")

    def test_ragged_tsv(self, tmp_path):
        """Rows with different widths are rejected with the line number."""
        (tmp_path / "m.tsv").write_text("1\t2\n3\n")
        with pytest.raises(FormatError, match="line 2"):
            read_matrix(tmp_path / "m.tsv")

    def test_missing_file(self, tmp_path):
        """A missing matrix file is a format error."""
        with pytest.raises(FormatError, match="not found"):
            read_matrix(tmp_path / "nope.gmx")


class TestManifestAndLoader:
    """Tests for the corpus manifest and record loading."""

    def test_load_round_trip(self, tmp_path, inventory, class_map):
        """Records written to disk load back identical."""
        records = [make_record("u1", [("K", 2, 0.9), ("AA", 3, 0.4)], inventory, text=["ka"]),
                   make_record("u2", [("B", 4, 0.6)], inventory, text=["b"])]
        manifest = _write_corpus(tmp_path, records, class_map)
        loaded_inventory, loaded_map = read_phone_class_map(tmp_path / "phones.tsv")
        assert loaded_inventory == inventory
        loaded = list(CorpusLoader(loaded_inventory).iter_records(read_manifest(manifest)))
        assert [r.utt_id for r in loaded] == ["u1", "u2"]
        for a, b in zip(records, loaded):
            np.testing.assert_array_equal(a.mfcc, b.mfcc)
            np.testing.assert_array_equal(a.post, b.post)
            assert a.align == b.align
            assert a.text == b.text

    def test_relative_paths(self, tmp_path, inventory, class_map):
        """Manifest paths are stored relative to the manifest."""
        records = [make_record("u1", [("K", 2, 0.9)], inventory)]
        manifest = _write_corpus(tmp_path, records, class_map)
        line = json.loads(manifest.read_text().splitlines()[0])
        assert line["mfcc"] == "feats/u1.mfcc.gmx"
        assert read_manifest(manifest)[0].mfcc == tmp_path / "feats" / "u1.mfcc.gmx"

    def test_duplicate_utterance(self, tmp_path):
        """Duplicate utt_ids name both lines."""
        line = json.dumps({"utt_id": "a", "mfcc": "m", "deep": "d", "post": "p", "align": "x", "text": ""})
        (tmp_path / "m.jsonl").write_text(f"{line}\n{line}\n")
        with pytest.raises(DuplicateKeyError, match="lines 1 and 2"):
            read_manifest(tmp_path / "m.jsonl")

    def test_missing_field(self, tmp_path):
        """Every manifest field is required."""
        (tmp_path / "m.jsonl").write_text(json.dumps({"utt_id": "a"}) + "\n")
        with pytest.raises(FormatError, match="missing field"):
            read_manifest(tmp_path / "m.jsonl")

    def test_bad_json(self, tmp_path):
        """Malformed JSON is reported with its line."""
        (tmp_path / "m.jsonl").write_text("{not json\n")
        with pytest.raises(FormatError, match="line 1"):
            read_manifest(tmp_path / "m.jsonl")

    def test_missing_feature_file(self, tmp_path, inventory, class_map):
        """A missing feature file names the utterance."""
        manifest = _write_corpus(tmp_path, [make_record("u1", [("K", 2, 0.9)], inventory)], class_map)
        (tmp_path / "feats" / "u1.deep.gmx").unlink()
        with pytest.raises(FormatError, match="u1: deep"):
            CorpusLoader(inventory).load(read_manifest(manifest)[0])

    def test_invalid_posteriors_rejected(self, tmp_path, inventory, class_map):
        """Loaded records are validated."""
        manifest = _write_corpus(tmp_path, [make_record("u1", [("K", 2, 0.9)], inventory)], class_map)
        write_matrix(np.full((2, len(inventory)), 0.5), tmp_path / "feats" / "u1.post.gmx")
        with pytest.raises(RowSumError):
            CorpusLoader(inventory).load(read_manifest(manifest)[0])

    def test_data_root(self, tmp_path, monkeypatch):
        """GMX_DATA_ROOT prefixes relative paths only."""
        monkeypatch.setenv("GMX_DATA_ROOT", str(tmp_path))
        assert resolve_path("a/b.tsv") == tmp_path / "a" / "b.tsv"
        assert resolve_path("/abs/x") == Path("/abs/x")
        monkeypatch.delenv("GMX_DATA_ROOT")
        assert str(resolve_path("a/b.tsv")) == "a/b.tsv"


class TestAlignmentFiles:
    """Tests for frame-index and CTM alignments."""

    def test_unknown_phone(self, tmp_path, inventory):
        """Unknown phone symbols name the line."""
        (tmp_path / "a.tsv").write_text("u1\tAA\t0\t2\nu1\tZZ\t2\t4\n")
        with pytest.raises(UnknownPhoneError, match="line 2"):
            read_alignment(tmp_path / "a.tsv", inventory)

    def test_overlap(self, tmp_path, inventory):
        """Overlapping segments are rejected."""
        (tmp_path / "a.tsv").write_text("u1\tAA\t0\t3\nu1\tB\t2\t4\n")
        with pytest.raises(AlignmentError):
            read_alignment(tmp_path / "a.tsv", inventory)

    def test_field_count(self, tmp_path, inventory):
        """Lines need exactly four fields."""
        (tmp_path / "a.tsv").write_text("u1\tAA\t0\n")
        with pytest.raises(FormatError, match="expected 4 fields"):
            read_alignment(tmp_path / "a.tsv", inventory)

    def test_comments_and_blanks(self, tmp_path, inventory):
        """Comment and blank lines are skipped."""
        (tmp_path / "a.tsv").write_text("# header\n\nu1\tAA\t0\t2\n")
        assert len(read_alignment(tmp_path / "a.tsv", inventory)["u1"]) == 1

    def test_ctm_frames(self, tmp_path, inventory):
        """CTM seconds become frames: start floored, end ceiled."""
        (tmp_path / "a.ctm").write_text(
            "u1 1 0.00 0.03 K\n"
            "u1 1 0.03 0.055 AA 0.98\n"
            "u2 A 0.10 0.02 B\n"
        )
        table = read_ctm_alignment(tmp_path / "a.ctm", inventory)
        assert [(s.phone.symbol, s.start, s.end) for s in table["u1"]] == [("K", 0, 3), ("AA", 3, 9)]
        assert [(s.start, s.end) for s in table["u2"]] == [(10, 12)]

    def test_ctm_custom_hop(self, tmp_path, inventory):
        """The frame hop is configurable."""
        (tmp_path / "a.ctm").write_text("u1 1 0.04 0.04 K\n")
        table = read_ctm_alignment(tmp_path / "a.ctm", inventory, hop=0.02)
        assert (table["u1"][0].start, table["u1"][0].end) == (2, 4)


class TestTextTables:
    """Tests for labels, phone maps and lexicons."""

    def test_labels_round_trip(self, tmp_path):
        """Labels keyed by (utt_id, word_index) survive a round trip."""
        labels = {("u1", 0): WordLabel("cab", 7.5), ("u1", 1): WordLabel("bat", 10.0)}
        write_labels(labels, tmp_path / "l.tsv")
        assert read_labels(tmp_path / "l.tsv") == labels

    def test_label_range(self, tmp_path):
        """Scores above 10 are rejected."""
        (tmp_path / "l.tsv").write_text("u1\t0\tcab\t10.5\n")
        with pytest.raises(ScoreRangeError):
            read_labels(tmp_path / "l.tsv")

    def test_duplicate_label(self, tmp_path):
        """A word position may be labeled once."""
        (tmp_path / "l.tsv").write_text("u1\t0\tcab\t5\nu1\t0\tcab\t6\n")
        with pytest.raises(DuplicateKeyError):
            read_labels(tmp_path / "l.tsv")

    def test_phone_map_order(self, tmp_path):
        """The inventory follows phone-map file order."""
        (tmp_path / "p.tsv").write_text("T\t0,1\nAA\t2\n")
        inventory, class_map = read_phone_class_map(tmp_path / "p.tsv")
        assert inventory.symbols == ("T", "AA")
        assert class_map.classes(inventory["T"]).tolist() == [0, 1]

    def test_phone_map_duplicate(self, tmp_path):
        """Duplicate phones are rejected."""
        (tmp_path / "p.tsv").write_text("T\t0\nT\t1\n")
        with pytest.raises(DuplicateKeyError):
            read_phone_class_map(tmp_path / "p.tsv")

    def test_lexicon_round_trip(self, tmp_path, lexicon, inventory):
        """Lexicons survive a round trip in insertion order."""
        write_lexicon(lexicon, tmp_path / "lex.tsv")
        loaded = read_lexicon(tmp_path / "lex.tsv", inventory)
        assert loaded == lexicon
        assert loaded.words == lexicon.words

    def test_lexicon_unknown_phone(self, tmp_path, inventory):
        """Lexicon phones must be in the inventory."""
        (tmp_path / "lex.tsv").write_text("dog\tD AO G\t1\n")
        with pytest.raises(UnknownPhoneError):
            read_lexicon(tmp_path / "lex.tsv", inventory)

    def test_lexicon_frequency(self, tmp_path, inventory):
        """Frequencies must be at least one."""
        (tmp_path / "lex.tsv").write_text("ab\tAA B\t0\n")
        with pytest.raises(ScoreRangeError):
            read_lexicon(tmp_path / "lex.tsv", inventory)


class TestBinaryFiles:
    """Tests for pool, dataset and checkpoint files."""

    def test_pool_round_trip(self, tmp_path, pools):
        """Pools round-trip exactly, with a per-phone offset index."""
        write_pool(pools, tmp_path / "p.gmpl")
        assert read_pool(tmp_path / "p.gmpl") == pools
        index = json.loads((tmp_path / "p.gmpl.index.json").read_text())
        assert index["version"] == FORMAT_VERSION
        assert index["phones"]["AA"]["count"] == 20
        assert index["phones"]["SIL"]["count"] == 0

    def test_pool_truncated(self, tmp_path, pools):
        """A truncated pool file is a format error."""
        write_pool(pools, tmp_path / "p.gmpl")
        raw = (tmp_path / "p.gmpl").read_bytes()
        (tmp_path / "p.gmpl").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FormatError, match="truncated"):
            read_pool(tmp_path / "p.gmpl")

    def test_pool_oversized_header(self, tmp_path):
        """Quadruplet dimensions larger than the file are a format error, not a crash."""
        raw = (POOL_MAGIC + struct.pack("<II", FORMAT_VERSION, 1) + struct.pack("<H", 2) + b"AA"
               + struct.pack("<Q", 1) + struct.pack("<III", 0xFFFFFFFF, 0xFFFFFFFF, 1))
        (tmp_path / "p.gmpl").write_bytes(raw)
        with pytest.raises(FormatError, match="offset 36"):
            read_pool(tmp_path / "p.gmpl")

    def test_dataset_zero_length_segment(self, tmp_path, inventory):
        """A zero entry in the segment lengths is rejected even when the total matches."""
        sample = make_sample(8)
        assert sample.segment_lengths == (4, 4)
        write_dataset([sample], inventory, tmp_path / "d.gmds")
        raw = (tmp_path / "d.gmds").read_bytes()
        good, bad = struct.pack("<III", 2, 4, 4), struct.pack("<III", 2, 0, 8)
        assert raw.count(good) == 1
        (tmp_path / "d.gmds").write_bytes(raw.replace(good, bad))
        with pytest.raises(FormatError, match="zero-length segment"):
            read_dataset(tmp_path / "d.gmds")

    def test_bad_magic(self, tmp_path, pools):
        """A dataset reader refuses a pool file."""
        write_pool(pools, tmp_path / "p.gmpl")
        with pytest.raises(FormatError, match="magic"):
            read_dataset(tmp_path / "p.gmpl")

    def test_bad_version(self, tmp_path, pools):
        """Unknown format versions are rejected."""
        write_pool(pools, tmp_path / "p.gmpl")
        raw = bytearray((tmp_path / "p.gmpl").read_bytes())
        raw[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
        (tmp_path / "p.gmpl").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            read_pool(tmp_path / "p.gmpl")

    def test_dataset_round_trip(self, tmp_path, inventory):
        """Datasets round-trip every field; the manifest goes to a sidecar."""
        samples = make_samples(12, Provenance.HUMAN_LABELED)
        write_dataset(samples, inventory, tmp_path / "d.gmds", manifest={"count": 12})
        loaded, loaded_inventory = read_dataset(tmp_path / "d.gmds")
        assert loaded_inventory == inventory
        assert json.loads((tmp_path / "d.gmds.json").read_text()) == {"count": 12}
        for a, b in zip(samples, loaded):
            assert (a.word, a.utt_id, a.word_index, a.target, a.provenance) == \
                (b.word, b.utt_id, b.word_index, b.target, b.provenance)
            assert a.phones_per_frame == b.phones_per_frame
            assert a.segment_lengths == b.segment_lengths
            np.testing.assert_array_equal(a.mfcc, b.mfcc)
            np.testing.assert_array_equal(a.deep, b.deep)

    def test_dataset_trailing_bytes(self, tmp_path, inventory):
        """Bytes after the last sample are rejected."""
        write_dataset(make_samples(2), inventory, tmp_path / "d.gmds")
        with open(tmp_path / "d.gmds", "ab") as f:
            f.write(b"x")
        with pytest.raises(FormatError, match="trailing"):
            read_dataset(tmp_path / "d.gmds")

    def test_checkpoint_round_trip(self, tmp_path, tiny_model):
        """Checkpoints restore config, tensors and predictions exactly."""
        write_checkpoint(tiny_model, tmp_path / "m.gmck", manifest={"seed": 3})
        loaded = read_checkpoint(tmp_path / "m.gmck")
        assert loaded.config == tiny_model.config
        for name, tensor in tiny_model.tensors().items():
            np.testing.assert_array_equal(loaded.tensors()[name], tensor)
        samples = make_samples(5)
        np.testing.assert_array_equal(predict(loaded, samples), predict(tiny_model, samples))
        assert json.loads((tmp_path / "m.gmck.json").read_text()) == {"seed": 3}

    def test_checkpoint_float64(self, tmp_path):
        """64-bit models keep their dtype."""
        model = init_model(tiny_config(dtype="float64"), np.random.default_rng(0))
        write_checkpoint(model, tmp_path / "m.gmck")
        loaded = read_checkpoint(tmp_path / "m.gmck")
        assert all(t.dtype == np.float64 for t in loaded.tensors().values())

    def test_checkpoint_shape_mismatch(self, tmp_path, tiny_model):
        """A config that disagrees with the stored tensors is rejected."""
        write_checkpoint(tiny_model, tmp_path / "m.gmck")
        raw = (tmp_path / "m.gmck").read_bytes()
        n = struct.unpack("<I", raw[8:12])[0]
        config = json.loads(raw[12:12 + n])
        config["d_hidden"] = 9
        blob = json.dumps(config).encode()
        (tmp_path / "m.gmck").write_bytes(raw[:8] + struct.pack("<I", len(blob)) + blob + raw[12 + n:])
        with pytest.raises(FormatError, match="shape"):
            read_checkpoint(tmp_path / "m.gmck")
