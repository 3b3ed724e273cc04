"""Ternary rANS entropy coder with per-symbol probability triples.

Frequencies use 12-bit precision (they sum to 4096, each at least 1).  The
coder state lives in [2**15, 2**23) with byte-wise renormalization, so a
finished chunk flushes exactly three state bytes.  Each chunk is encoded
independently: symbols are processed in reverse (rANS is last-in
first-out) and the emitted bytes reversed, so the decoder consumes the
chunk front to back.  The encoder starts from the state lower bound, which
the decoder must land on exactly after the last symbol - a cheap built-in
desync check on top of the per-chunk CRC kept in the container table.
"""

import zlib

import numpy as np

from .errors import DecodeError, ParameterError

PROB_BITS = 12
PROB_SCALE = 1 << PROB_BITS  # 4096
STATE_LO = 1 << 15
STATE_BYTES = 3
_RENORM_FACTOR = (STATE_LO >> PROB_BITS) << 8  # per-unit-frequency state cap

DEFAULT_CHUNK_SIZE = 1024


def quantize_probs(p):
    """Deterministic 12-bit frequency triples from probability triples.

    Largest-remainder rounding to an exact sum of 4096, ties broken toward
    the lower symbol index, then a floor of 1 per symbol (taken from the
    largest frequency) so no symbol is ever uncodable.

    Accepts shape (3,) or (3, N); returns int64 of the same shape.
    """
    p = np.asarray(p, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[:, None]
    if p.shape[0] != 3:
        raise ParameterError("probability triples must have leading dimension 3")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ParameterError("probabilities must be finite and nonnegative")
    total = p.sum(axis=0)
    if np.any(total <= 0):
        raise ParameterError("probability triples must have positive mass")
    raw = p / total * PROB_SCALE
    base = np.floor(raw).astype(np.int64)
    rem = raw - base
    short = PROB_SCALE - base.sum(axis=0)

    # rank remainders per column; equal remainders rank lower index first
    rank = np.zeros_like(base)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            rank[i] += (rem[j] > rem[i]) | ((rem[j] == rem[i]) & (j < i))
    freqs = base + (rank < short)

    # floor-of-one fixup, paid by the largest frequency
    zeros = (freqs == 0).sum(axis=0)
    if np.any(zeros):
        cols = np.nonzero(zeros)[0]
        freqs[:, cols] = np.where(freqs[:, cols] == 0, 1, freqs[:, cols])
        top = np.argmax(freqs[:, cols], axis=0)
        freqs[top, cols] -= zeros[cols]
    return freqs[:, 0] if squeeze else freqs


def encode_chunk(symbols, freqs):
    """rANS-encode one chunk of trits with per-symbol frequency triples."""
    symbols = np.asarray(symbols)
    freqs = np.asarray(freqs, dtype=np.int64)
    n = len(symbols)
    if freqs.shape != (n, 3):
        raise ParameterError("freqs must have shape (n, 3)")
    if n and (freqs.min() < 1 or np.any(freqs.sum(axis=1) != PROB_SCALE)):
        raise ParameterError("frequencies must be >= 1 and sum to 4096")
    syms = symbols.tolist()
    f_list = freqs.tolist()
    state = STATE_LO
    tail = bytearray()
    for i in range(n - 1, -1, -1):
        s = syms[i]
        f0, f1, f2 = f_list[i]
        f = (f0, f1, f2)[s]
        start = 0 if s == 0 else (f0 if s == 1 else f0 + f1)
        cap = _RENORM_FACTOR * f
        while state >= cap:
            tail.append(state & 0xFF)
            state >>= 8
        state = ((state // f) << PROB_BITS) + (state % f) + start
    head = state.to_bytes(STATE_BYTES, "little")
    return head + bytes(reversed(tail))


def decode_chunk(data, freqs):
    """Decode one chunk; the frequency sequence must match the encoder's."""
    freqs = np.asarray(freqs, dtype=np.int64)
    n = freqs.shape[0]
    if n == 0:
        if data:
            raise DecodeError("bytes present for an empty chunk")
        return np.zeros(0, dtype=np.int8)
    if len(data) < STATE_BYTES:
        raise DecodeError("chunk shorter than the coder state")
    state = int.from_bytes(data[:STATE_BYTES], "little")
    pos = STATE_BYTES
    size = len(data)
    f_list = freqs.tolist()
    out = np.empty(n, dtype=np.int8)
    mask = PROB_SCALE - 1
    for i in range(n):
        slot = state & mask
        f0, f1, f2 = f_list[i]
        if slot < f0:
            s, start, f = 0, 0, f0
        elif slot < f0 + f1:
            s, start, f = 1, f0, f1
        else:
            s, start, f = 2, f0 + f1, f2
        out[i] = s
        state = f * (state >> PROB_BITS) + slot - start
        while state < STATE_LO:
            if pos >= size:
                raise DecodeError("chunk exhausted mid-symbol")
            state = (state << 8) | data[pos]
            pos += 1
    if state != STATE_LO or pos != size:
        raise DecodeError("coder state desynchronized at end of chunk")
    return out


def chunk_checksum(data):
    """16-bit CRC tag stored in the chunk table."""
    return zlib.crc32(data) & 0xFFFF


def chunk_spans(n, chunk_size):
    """(start, end) trit ranges covering n trits in chunk_size groups."""
    if chunk_size < 1:
        raise ParameterError("chunk_size must be >= 1")
    return [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def encode_symbols(symbols, freqs, chunk_size=DEFAULT_CHUNK_SIZE):
    """Encode a symbol sequence into independently flushed chunks.

    Returns a list of chunk payloads; an empty input yields an empty list.
    """
    symbols = np.asarray(symbols)
    freqs = np.asarray(freqs, dtype=np.int64)
    return [
        encode_chunk(symbols[a:b], freqs[a:b]) for a, b in chunk_spans(len(symbols), chunk_size)
    ]
