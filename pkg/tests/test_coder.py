"""Tests for frequency quantization, the rANS coder, and the container."""

import numpy as np
import pytest

from tritcodec.coder import (
    PROB_SCALE,
    chunk_checksum,
    chunk_spans,
    decode_chunk,
    encode_chunk,
    encode_symbols,
    quantize_probs,
)
from tritcodec.container import (
    ChunkRecord,
    Container,
    StreamHeader,
    MODE_LATENT,
)
from tritcodec.errors import DataError, DecodeError, ParameterError, ParseError


def random_coded_stream(rng, n, chunk_size=256):
    """Random triples, matching symbols, and their encoded chunks."""
    p = rng.dirichlet((1.0, 1.0, 1.0), size=n).T
    freqs = quantize_probs(p).T
    u = rng.random(n)
    cum = np.cumsum(freqs, axis=1) / PROB_SCALE
    syms = (u[:, None] > cum).sum(axis=1).astype(np.int8)
    chunks = encode_symbols(syms, freqs, chunk_size)
    return syms, freqs, chunks


class TestQuantizeProbs:
    def test_uniform_hand_check(self):
        """Largest-remainder with the index tie-break."""
        np.testing.assert_array_equal(
            quantize_probs(np.array([1, 1, 1]) / 3.0), [1366, 1365, 1365]
        )

    def test_one_hot_floor(self):
        np.testing.assert_array_equal(
            quantize_probs(np.array([1.0, 0.0, 0.0])), [4094, 1, 1]
        )
        np.testing.assert_array_equal(
            quantize_probs(np.array([0.0, 1.0, 0.0])), [1, 4094, 1]
        )

    def test_sum_and_floor_always_hold(self):
        rng = np.random.default_rng(6)
        p = rng.dirichlet((0.2, 0.2, 0.2), size=500).T
        f = quantize_probs(p)
        assert np.all(f.sum(axis=0) == PROB_SCALE)
        assert f.min() >= 1

    def test_rounding_bound(self):
        rng = np.random.default_rng(7)
        p = rng.dirichlet((1.0, 1.0, 1.0), size=300).T
        f = quantize_probs(p)
        # within one quantization step except where the floor kicked in
        gap = np.abs(f / PROB_SCALE - p)
        assert np.all(gap <= 2.0 / PROB_SCALE + 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        p = rng.dirichlet((1.0, 1.0, 1.0), size=64).T
        np.testing.assert_array_equal(quantize_probs(p), quantize_probs(p.copy()))

    def test_rejects_bad_triples(self):
        with pytest.raises(ParameterError):
            quantize_probs(np.array([0.5, 0.5]))
        with pytest.raises(ParameterError):
            quantize_probs(np.array([-0.1, 0.6, 0.5]))
        with pytest.raises(ParameterError):
            quantize_probs(np.array([0.0, 0.0, 0.0]))


class TestRansChunk:
    def test_empty(self):
        assert encode_symbols(np.zeros(0, dtype=np.int8), np.zeros((0, 3))) == []

    def test_round_trip_random_cases(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            n = int(rng.integers(1, 120))
            syms, freqs, chunks = random_coded_stream(rng, n, chunk_size=64)
            out = [
                decode_chunk(data, freqs[a:b])
                for (a, b), data in zip(chunk_spans(n, 64), chunks)
            ]
            np.testing.assert_array_equal(np.concatenate(out), syms)

    def test_round_trip_skewed(self):
        """Heavily skewed triples including the floor-1 extreme."""
        rng = np.random.default_rng(11)
        n = 4000
        freqs = np.tile([4094, 1, 1], (n, 1))
        syms = (rng.random(n) < 0.001).astype(np.int8)
        data = encode_chunk(syms, freqs)
        np.testing.assert_array_equal(decode_chunk(data, freqs), syms)

    def test_rate_envelope(self):
        """bits <= sum(-log2 f/4096) + 32 bits per chunk."""
        rng = np.random.default_rng(12)
        n = 20000
        syms, freqs, chunks = random_coded_stream(rng, n, chunk_size=1024)
        bits = 8 * sum(len(c) for c in chunks)
        ce = float(-np.log2(freqs[np.arange(n), syms] / PROB_SCALE).sum())
        assert bits <= ce + 32 * len(chunks)

    def test_prefix_chunks_decode_exactly(self):
        rng = np.random.default_rng(13)
        n = 3000
        syms, freqs, chunks = random_coded_stream(rng, n, chunk_size=500)
        spans = chunk_spans(n, 500)
        for k in range(len(chunks) + 1):
            got = [
                decode_chunk(data, freqs[a:b])
                for (a, b), data in zip(spans[:k], chunks[:k])
            ]
            flat = np.concatenate(got) if got else np.zeros(0, dtype=np.int8)
            np.testing.assert_array_equal(flat, syms[: spans[k - 1][1] if k else 0])

    def test_desync_detected_on_wrong_freqs(self):
        rng = np.random.default_rng(14)
        syms, freqs, chunks = random_coded_stream(rng, 64, chunk_size=64)
        wrong = freqs.copy()
        wrong[10] = [1365, 1366, 1365]
        if np.array_equal(wrong, freqs):
            wrong[10] = [1366, 1365, 1365]
        with pytest.raises(DecodeError):
            decoded = decode_chunk(chunks[0], wrong)
            # a silent mis-decode must still trip the final state check
            assert not np.array_equal(decoded, syms)
            raise DecodeError("reached here only when symbols differ")

    def test_rejects_bad_freqs(self):
        with pytest.raises(ParameterError):
            encode_chunk(np.array([0]), np.array([[0, 2048, 2048]]))
        with pytest.raises(ParameterError):
            encode_chunk(np.array([0]), np.array([[1, 1, 1]]))


def small_container(rng, n=900, chunk_size=128):
    syms, freqs, chunks = random_coded_stream(rng, n, chunk_size)
    records = []
    for (a, b), data in zip(chunk_spans(n, chunk_size), chunks):
        records.append(ChunkRecord(1, b - a, len(data), chunk_checksum(data)))
    header = StreamHeader(
        mode=MODE_LATENT,
        shape=(1, 30, 30),
        depth=3,
        chunk_size=chunk_size,
        params=np.array([[0.0, 2.5]], dtype=np.float32),
    )
    return Container(header, records, b"".join(chunks)), syms, freqs


class TestContainer:
    def test_header_only_round_trip(self):
        header = StreamHeader(
            mode=MODE_LATENT,
            shape=(2, 4, 5),
            depth=4,
            chunk_size=64,
            params=np.array([[0.5, 1.0], [-0.25, 3.0]], dtype=np.float32),
            model_checksum=0xDEADBEEF,
        )
        cont = Container(header)
        parsed = Container.parse(cont.serialize())
        assert parsed.header.shape == (2, 4, 5)
        assert parsed.header.model_checksum == 0xDEADBEEF
        np.testing.assert_array_equal(parsed.header.params, header.params)
        assert parsed.chunks == [] and parsed.payload == b""

    def test_full_round_trip(self):
        rng = np.random.default_rng(15)
        cont, _, _ = small_container(rng)
        parsed = Container.parse(cont.serialize())
        assert parsed.chunks == cont.chunks
        assert parsed.payload == cont.payload

    def test_truncate_at_every_boundary_parses(self):
        rng = np.random.default_rng(16)
        cont, _, _ = small_container(rng)
        for k in range(len(cont.chunks) + 1):
            cut = cont.truncate_chunks(k)
            parsed = Container.parse(cut.serialize())
            assert len(parsed.chunks) == k
            assert len(cut.serialize()) == cont.serialized_size(k)

    def test_truncate_bytes_picks_largest_prefix(self):
        rng = np.random.default_rng(17)
        cont, _, _ = small_container(rng)
        sizes = cont.boundaries()
        for k, size in enumerate(sizes):
            assert len(cont.truncate_bytes(size).chunks) == k
            if k < len(cont.chunks):
                assert len(cont.truncate_bytes(size + 1).chunks) == k
        with pytest.raises(DataError):
            cont.truncate_bytes(sizes[0] - 1)

    def test_single_byte_corruption_never_crashes(self):
        """Flip each header/table byte: structured error or clean parse."""
        rng = np.random.default_rng(18)
        cont, _, _ = small_container(rng, n=300)
        blob = bytearray(cont.serialize())
        table_end = len(blob) - len(cont.payload)
        for pos in range(table_end):
            for flip in (0x01, 0x80):
                bad = bytearray(blob)
                bad[pos] ^= flip
                try:
                    Container.parse(bytes(bad))
                except ParseError:
                    pass

    def test_structural_corruptions_are_errors(self):
        rng = np.random.default_rng(19)
        cont, _, _ = small_container(rng, n=300)
        blob = bytearray(cont.serialize())
        bad = bytearray(blob)
        bad[0] ^= 0xFF  # magic
        with pytest.raises(ParseError):
            Container.parse(bytes(bad))
        bad = bytearray(blob)
        bad[4] ^= 0xFF  # version
        with pytest.raises(ParseError):
            Container.parse(bytes(bad))
        with pytest.raises(ParseError):
            Container.parse(bytes(blob[:10]))
        with pytest.raises(ParseError):
            Container.parse(bytes(blob) + b"x")  # trailing garbage
