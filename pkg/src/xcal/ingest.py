"""Streaming parsers and writers for ground-truth and prediction files.

Two surfaces per format: a line-oriented parser yielding row records,
and a chunked binary reader yielding columnar blocks for the high
throughput paths.  Both validate identically and report 1-based file
line numbers in error messages.

Ground truth (repository format)::

    N D M
    l1,l2,... f:v f:v ...

The label field is everything before the first space (possibly empty);
feature pairs are skipped without being materialised.

Predictions (TSV of pairs)::

    instance_id<TAB>label:prob label:prob ...

UTF-8, LF line endings, no BOM.  Instance ids are strictly increasing
within a file.  Entries are re-sorted non-increasing by probability
(ties by ascending label id) regardless of file order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .core import GroundTruth, PredictionBlock, TopKPredictions, TruthBlock

DEFAULT_CHUNK_BYTES = 8 * 1024 * 1024


class FormatError(ValueError):
    """Malformed input file."""


class AlignmentError(ValueError):
    """Ground truth and predictions do not line up."""


@dataclass(frozen=True)
class RepoHeader:
    n: int
    d: int
    m: int


def _format_prob(p: float) -> str:
    # repr() is the shortest representation that round-trips bit-exactly
    return repr(float(p))


# ---------------------------------------------------------------------------
# line-oriented parsers


def parse_repo_header(line: str) -> RepoHeader:
    parts = line.split()
    if len(parts) != 3:
        raise FormatError("bad header")
    try:
        n, d, m = (int(p) for p in parts)
    except ValueError:
        raise FormatError("bad header") from None
    if n <= 0 or d <= 0 or m <= 0:
        raise FormatError("bad header")
    return RepoHeader(n, d, m)


def parse_repo_file(stream: Iterable[str]) -> tuple[RepoHeader, Iterator[GroundTruth]]:
    """Parse the repository text format; features are skipped unread."""
    it = iter(stream)
    try:
        first = next(it)
    except StopIteration:
        raise FormatError("bad header") from None
    header = parse_repo_header(first)

    def rows() -> Iterator[GroundTruth]:
        for idx, line in enumerate(it):
            lineno = idx + 2  # header occupies line 1
            head = line.rstrip("\n").partition(" ")[0]
            if not head:
                yield GroundTruth(idx, frozenset())
                continue
            labels = set()
            for tok in head.split(","):
                try:
                    label = int(tok)
                except ValueError:
                    raise FormatError(f"bad label token (line {lineno})") from None
                if label < 0:
                    raise FormatError(f"bad label token (line {lineno})")
                if label >= header.m:
                    raise FormatError(f"label out of range (line {lineno})")
                labels.add(label)
            yield GroundTruth(idx, frozenset(labels))

    return header, rows()


def parse_prediction_dump(stream: Iterable[str]) -> Iterator[TopKPredictions]:
    """Parse the TSV prediction format, re-sorting entries per instance."""
    last_id = -1
    for idx, line in enumerate(stream):
        lineno = idx + 1
        line = line.rstrip("\n")
        id_str, _, rest = line.partition("\t")
        try:
            instance_id = int(id_str)
        except ValueError:
            raise FormatError(f"bad instance id (line {lineno})") from None
        if instance_id < 0:
            raise FormatError(f"bad instance id (line {lineno})")
        if instance_id <= last_id:
            raise FormatError(f"instance ids not increasing (line {lineno})")
        last_id = instance_id
        entries = []
        seen = set()
        for tok in rest.split():
            label_str, sep, prob_str = tok.partition(":")
            try:
                label = int(label_str)
                prob = float(prob_str) if sep else None
            except ValueError:
                raise FormatError(f"bad entry token (line {lineno})") from None
            if prob is None or label < 0:
                raise FormatError(f"bad entry token (line {lineno})")
            if not prob >= 0.0 or prob > 1.0:
                raise FormatError(f"probability out of range (line {lineno})")
            if label in seen:
                raise FormatError(f"duplicate label (line {lineno})")
            seen.add(label)
            entries.append((label, prob))
        entries.sort(key=lambda e: (-e[1], e[0]))
        yield TopKPredictions(instance_id, tuple(entries))


# ---------------------------------------------------------------------------
# writers


def write_prediction_dump(rows, sink: IO[str] | str) -> None:
    """Write rows in the TSV format; a parse of the output reproduces them bit-for-bit."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            write_prediction_dump(rows, fh)
        return
    if isinstance(rows, PredictionBlock):
        rows = rows.iter_rows()
    for row in rows:
        tail = " ".join(f"{label}:{_format_prob(prob)}" for label, prob in row.entries)
        sink.write(f"{row.instance_id}\t{tail}\n")


def write_repo_file(header: RepoHeader, rows, sink: IO[str] | str) -> None:
    """Write ground truth in the repository format (labels only, no features)."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            write_repo_file(header, rows, fh)
        return
    sink.write(f"{header.n} {header.d} {header.m}\n")
    if isinstance(rows, TruthBlock):
        rows = rows.iter_rows()
    for row in rows:
        sink.write(",".join(str(l) for l in sorted(row.relevant)))
        sink.write("\n")


# ---------------------------------------------------------------------------
# chunked binary readers


def _iter_line_chunks(source, chunk_bytes: int) -> Iterator[tuple[bytes, int]]:
    """Yield (complete-lines chunk, first line number) pairs, 1-based."""
    own = False
    if isinstance(source, str):
        fh = open(source, "rb")
        own = True
    else:
        fh = source
    try:
        carry = b""
        lineno = 1
        while True:
            data = fh.read(chunk_bytes)
            if not data:
                break
            data = carry + data
            cut = data.rfind(b"\n")
            if cut < 0:
                carry = data
                continue
            chunk = data[: cut + 1]
            carry = data[cut + 1 :]
            yield chunk, lineno
            lineno += chunk.count(b"\n")
        if carry:
            yield carry + b"\n", lineno
    finally:
        if own:
            fh.close()


def read_dump_blocks(
    source, chunk_bytes: int = DEFAULT_CHUNK_BYTES
) -> Iterator[PredictionBlock]:
    """Stream a prediction dump as columnar blocks with bounded memory."""
    last_id = -1
    for chunk, lineno in _iter_line_chunks(source, chunk_bytes):
        block = _parse_dump_chunk(chunk, lineno, last_id)
        if block.n_rows:
            last_id = int(block.ids[-1])
            yield block


def _parse_dump_chunk(chunk: bytes, lineno: int, last_id: int) -> PredictionBlock:
    norm = chunk.replace(b"\t", b" ").replace(b":", b" ")
    ids_s: list[bytes] = []
    toks: list[bytes] = []
    counts: list[int] = []
    for line in norm.split(b"\n")[:-1]:
        parts = line.split()
        if not parts:
            raise FormatError(f"bad instance id (line {lineno + len(ids_s)})")
        npairs, odd = divmod(len(parts) - 1, 2)
        if odd:
            _dump_slow_scan(chunk, lineno, last_id)
        ids_s.append(parts[0])
        counts.append(npairs)
        toks.extend(parts[1:])

    n_rows = len(ids_s)
    # every pair token carried exactly one colon; a global mismatch means
    # some line was malformed, so rescan slowly for the precise position
    if chunk.count(b":") != len(toks) // 2:
        _dump_slow_scan(chunk, lineno, last_id)
    try:
        ids = np.array(ids_s, dtype=np.int64) if ids_s else np.zeros(0, np.int64)
        labels = np.array(toks[0::2], dtype=np.int64) if toks else np.zeros(0, np.int64)
        probs = np.array(toks[1::2], dtype=np.float64) if toks else np.zeros(0, np.float64)
    except ValueError:
        _dump_slow_scan(chunk, lineno, last_id)
        raise AssertionError("unreachable")

    pairs_per_row = np.array(counts, dtype=np.int64)
    row_ptr = np.concatenate(([0], np.cumsum(pairs_per_row))).astype(np.int64)
    rows_of_pairs = np.repeat(np.arange(n_rows, dtype=np.int64), pairs_per_row)

    bad = ~(probs >= 0.0) | (probs > 1.0)
    if bad.any():
        row = int(rows_of_pairs[int(np.flatnonzero(bad)[0])])
        raise FormatError(f"probability out of range (line {lineno + row})")
    if (labels < 0).any():
        row = int(rows_of_pairs[int(np.flatnonzero(labels < 0)[0])])
        raise FormatError(f"bad entry token (line {lineno + row})")
    if (ids < 0).any():
        row = int(np.flatnonzero(ids < 0)[0])
        raise FormatError(f"bad instance id (line {lineno + row})")
    if n_rows:
        if int(ids[0]) <= last_id or (n_rows > 1 and (np.diff(ids) <= 0).any()):
            prev = np.concatenate(([last_id], ids[:-1]))
            row = int(np.flatnonzero(ids <= prev)[0])
            raise FormatError(f"instance ids not increasing (line {lineno + row})")

    # duplicate labels within a row
    if len(labels):
        span = np.int64(labels.max()) + 1
        keys = rows_of_pairs * span + labels
        if len(np.unique(keys)) != len(keys):
            order = np.lexsort((labels, rows_of_pairs))
            same = (np.diff(rows_of_pairs[order]) == 0) & (np.diff(labels[order]) == 0)
            row = int(rows_of_pairs[order[int(np.flatnonzero(same)[0])]])
            raise FormatError(f"duplicate label (line {lineno + row})")

    # re-sort rows non-increasing by prob, ties by ascending label
    if len(probs) > 1:
        d_prob = np.diff(probs)
        d_label = np.diff(labels)
        row_start = np.zeros(len(probs), dtype=bool)
        interior = row_ptr[1:-1]
        row_start[interior[interior < len(probs)]] = True
        ok = (d_prob < 0) | ((d_prob == 0) & (d_label > 0)) | row_start[1:]
        if not ok.all():
            order = np.lexsort((labels, -probs, rows_of_pairs))
            labels = labels[order]
            probs = probs[order]
    return PredictionBlock(ids, labels, probs, row_ptr)


def _dump_slow_scan(chunk: bytes, lineno: int, last_id: int) -> None:
    """Re-parse a bad chunk line by line to raise a precise error."""
    text = chunk.decode("utf-8", errors="replace")
    lines = text.split("\n")[:-1]
    it = parse_prediction_dump(lines)
    count = 0
    try:
        for _ in it:
            count += 1
    except FormatError as exc:
        msg = str(exc)
        if "(line " in msg:
            head, _, tail = msg.rpartition("(line ")
            local = int(tail.rstrip(")"))
            raise FormatError(f"{head}(line {lineno + local - 1})") from None
        raise
    raise FormatError(f"bad entry token (line {lineno + count})")


def read_truth_blocks(
    source, chunk_bytes: int = DEFAULT_CHUNK_BYTES
) -> tuple[RepoHeader, Iterator[TruthBlock]]:
    """Stream the repository format as columnar blocks with bounded memory."""
    own = False
    if isinstance(source, str):
        fh = open(source, "rb")
        own = True
    else:
        fh = source
    header_line = fh.readline()
    try:
        header = parse_repo_header(header_line.decode("utf-8"))
    except FormatError:
        if own:
            fh.close()
        raise

    def blocks() -> Iterator[TruthBlock]:
        row_offset = 0
        try:
            for chunk, lineno in _iter_line_chunks(fh, chunk_bytes):
                block = _parse_truth_chunk(chunk, lineno + 1, row_offset, header.m)
                row_offset += block.n_rows
                yield block
        finally:
            if own:
                fh.close()

    return header, blocks()


def _parse_truth_chunk(chunk: bytes, lineno: int, row_offset: int, m: int) -> TruthBlock:
    toks: list[bytes] = []
    counts: list[int] = []
    for line in chunk.split(b"\n")[:-1]:
        head = line.partition(b" ")[0]
        if head:
            parts = head.split(b",")
            toks.extend(parts)
            counts.append(len(parts))
        else:
            counts.append(0)
    try:
        labels = np.array(toks, dtype=np.int64) if toks else np.zeros(0, np.int64)
    except ValueError:
        _truth_slow_scan(chunk, lineno, m)
        raise AssertionError("unreachable")
    counts_arr = np.array(counts, dtype=np.int64)
    rows_of_labels = np.repeat(np.arange(len(counts), dtype=np.int64), counts_arr)
    bad = (labels < 0) | (labels >= m)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        row = int(rows_of_labels[first])
        if labels[first] < 0:
            raise FormatError(f"bad label token (line {lineno + row})")
        raise FormatError(f"label out of range (line {lineno + row})")

    # rows already strictly ascending (the common case for files we wrote)
    # need no sort or dedupe
    already_sorted = True
    if len(labels) > 1:
        row_start = np.zeros(len(labels), dtype=bool)
        interior = np.cumsum(counts_arr)[:-1]
        row_start[interior[interior < len(labels)]] = True
        already_sorted = bool(((np.diff(labels) > 0) | row_start[1:]).all())
    if already_sorted:
        row_ptr = np.concatenate(([0], np.cumsum(counts_arr))).astype(np.int64)
        ids = row_offset + np.arange(len(counts), dtype=np.int64)
        return TruthBlock(labels, row_ptr, m, ids)

    order = np.lexsort((labels, rows_of_labels))
    labels = labels[order]
    rows_sorted = rows_of_labels[order]
    if len(labels) > 1:
        keep = np.concatenate(
            ([True], (np.diff(labels) != 0) | (np.diff(rows_sorted) != 0))
        )
        labels = labels[keep]
        rows_sorted = rows_sorted[keep]
    dedup_counts = np.bincount(rows_sorted, minlength=len(counts)).astype(np.int64)
    row_ptr = np.concatenate(([0], np.cumsum(dedup_counts))).astype(np.int64)
    ids = row_offset + np.arange(len(counts), dtype=np.int64)
    return TruthBlock(labels, row_ptr, m, ids)


def _truth_slow_scan(chunk: bytes, lineno: int, m: int) -> None:
    text = chunk.decode("utf-8", errors="replace")
    for offset, line in enumerate(text.split("\n")[:-1]):
        head = line.partition(" ")[0]
        if not head:
            continue
        for tok in head.split(","):
            try:
                label = int(tok)
            except ValueError:
                raise FormatError(f"bad label token (line {lineno + offset})") from None
            if label < 0:
                raise FormatError(f"bad label token (line {lineno + offset})")
            if label >= m:
                raise FormatError(f"label out of range (line {lineno + offset})")
    raise FormatError(f"bad label token (line {lineno})")


# ---------------------------------------------------------------------------
# whole-file convenience loaders and alignment


def load_truth(path: str) -> TruthBlock:
    header, blocks = read_truth_blocks(path)
    merged = _merge_truth_blocks(list(blocks), header.m)
    return merged


def _merge_truth_blocks(blocks: list[TruthBlock], m: int | None) -> TruthBlock:
    if not blocks:
        return TruthBlock(np.zeros(0, np.int64), np.zeros(1, np.int64), m)
    labels = np.concatenate([b.labels for b in blocks])
    ids = np.concatenate([b.ids for b in blocks])
    ptr = [np.zeros(1, np.int64)]
    offset = 0
    for b in blocks:
        ptr.append(b.row_ptr[1:] + offset)
        offset += int(b.row_ptr[-1])
    return TruthBlock(labels, np.concatenate(ptr), m, ids)


def load_predictions(path: str) -> PredictionBlock:
    blocks = list(read_dump_blocks(path))
    if not blocks:
        return PredictionBlock(
            np.zeros(0, np.int64), np.zeros(0, np.int64),
            np.zeros(0, np.float64), np.zeros(1, np.int64),
        )
    ids = np.concatenate([b.ids for b in blocks])
    labels = np.concatenate([b.labels for b in blocks])
    probs = np.concatenate([b.probs for b in blocks])
    ptr = [np.zeros(1, np.int64)]
    offset = 0
    for b in blocks:
        ptr.append(b.row_ptr[1:] + offset)
        offset += int(b.row_ptr[-1])
    return PredictionBlock(ids, labels, probs, np.concatenate(ptr))


def check_alignment(preds: PredictionBlock, truth: TruthBlock, strict_ids: bool = False) -> None:
    """Positional alignment by default; strict mode also requires matching ids."""
    if preds.n_rows != truth.n_rows:
        raise AlignmentError(
            f"alignment mismatch: {truth.n_rows} truth rows vs {preds.n_rows} prediction rows"
        )
    if strict_ids and not np.array_equal(preds.ids, truth.ids):
        first = int(np.flatnonzero(preds.ids != truth.ids)[0])
        raise AlignmentError(
            f"instance id mismatch at row {first}: "
            f"prediction id {int(preds.ids[first])} vs truth id {int(truth.ids[first])}"
        )


def dump_to_string(rows) -> str:
    buf = io.StringIO()
    write_prediction_dump(rows, buf)
    return buf.getvalue()
