"""Conventional chain: byte Huffman coding, Reed-Solomon over GF(2^m), Gray 64-QAM."""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from rdeepsc import diagnostics
from rdeepsc.channel import ChannelConfig, transmit_frame

ESC = 256
EOM = 257
REPLACEMENT = "�"


# -- Galois field ---------------------------------------------------------------


class GaloisField:
    """GF(2^m) with log/antilog tables built from a primitive polynomial."""

    def __init__(self, m: int, prim: int):
        self.m = m
        self.size = 1 << m
        self.exp = [0] * (2 * self.size)
        self.log = [0] * self.size
        x = 1
        for i in range(self.size - 1):
            self.exp[i] = x
            self.log[x] = i
            x <<= 1
            if x & self.size:
                x ^= prim
            if x == 1 and i < self.size - 2:
                raise ValueError(f"polynomial {prim:#x} is not primitive for GF(2^{m})")
        if x != 1:
            raise ValueError(f"polynomial {prim:#x} is not primitive for GF(2^{m})")
        for i in range(self.size - 1, 2 * self.size):
            self.exp[i] = self.exp[i - (self.size - 1)]

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("zero has no inverse in GF(2^m)")
        return self.exp[(self.size - 1) - self.log[a]]

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    def pow(self, a: int, n: int) -> int:
        if a == 0:
            return 0 if n else 1
        return self.exp[(self.log[a] * n) % (self.size - 1)]

    # polynomials are coefficient lists, lowest degree first
    def poly_mul(self, p: Sequence[int], q: Sequence[int]) -> list[int]:
        out = [0] * (len(p) + len(q) - 1)
        for i, a in enumerate(p):
            if a:
                for j, b in enumerate(q):
                    out[i + j] ^= self.mul(a, b)
        return out

    def poly_eval(self, p: Sequence[int], x: int) -> int:
        acc = 0
        for c in reversed(p):
            acc = self.mul(acc, x) ^ c
        return acc


# -- Reed-Solomon ---------------------------------------------------------------------


@dataclass(frozen=True)
class RsConfig:
    m: int = 4
    k: int = 11
    prim: int = 0x13

    @property
    def n(self) -> int:
        return (1 << self.m) - 1

    @property
    def t(self) -> int:
        return (self.n - self.k) // 2

    def __post_init__(self) -> None:
        if not 0 < self.k < self.n:
            raise ValueError(f"need 0 < k < n, got k={self.k}, n={self.n}")


RS_15_11 = RsConfig(4, 11, 0x13)
RS_255_223 = RsConfig(8, 223, 0x11D)


class RsDecodeError(ValueError):
    """More errors than the code can correct (detected)."""


class ReedSolomon:
    """Systematic RS code. Codewords are lowest-degree-first symbol lists; the
    message sits in the top k positions and parity in the bottom n - k."""

    def __init__(self, cfg: RsConfig = RS_15_11):
        self.cfg = cfg
        self.gf = GaloisField(cfg.m, cfg.prim)
        g = [1]
        for i in range(cfg.n - cfg.k):
            g = self.gf.poly_mul(g, [self.gf.exp[i], 1])
        self.generator = g

    def encode(self, message: Sequence[int]) -> list[int]:
        n, k = self.cfg.n, self.cfg.k
        if len(message) != k:
            raise ValueError(f"message must have {k} symbols, got {len(message)}")
        if any(not 0 <= s < self.gf.size for s in message):
            raise ValueError("message symbol outside the field")
        # remainder of message * x^(n-k) divided by the monic generator
        rem = [0] * (n - k) + list(message)
        for i in range(n - 1, n - k - 1, -1):
            coef = rem[i]
            if coef:
                for j, gj in enumerate(self.generator):
                    rem[i - (n - k) + j] ^= self.gf.mul(coef, gj)
        return rem[: n - k] + list(message)

    def syndromes(self, received: Sequence[int]) -> list[int]:
        return [self.gf.poly_eval(received, self.gf.exp[j]) for j in range(self.cfg.n - self.cfg.k)]

    def decode(self, received: Sequence[int]) -> list[int]:
        """Correct up to t symbol errors; raise RsDecodeError when detection says otherwise."""
        gf, n, k = self.gf, self.cfg.n, self.cfg.k
        if len(received) != n:
            raise ValueError(f"received word must have {n} symbols, got {len(received)}")
        r = list(received)
        synd = self.syndromes(r)
        if not any(synd):
            return r[n - k :]
        locator = self._berlekamp_massey(synd)
        errors = len(locator) - 1
        positions = [i for i in range(n) if gf.poly_eval(locator, gf.inv(gf.exp[i])) == 0]
        if errors > self.cfg.t or len(positions) != errors:
            raise RsDecodeError(f"uncorrectable: locator degree {errors}, {len(positions)} roots")
        omega = gf.poly_mul(synd, locator)[: n - k]
        deriv = [locator[i] if i % 2 else 0 for i in range(1, len(locator))]
        for pos in positions:
            x = gf.exp[pos]
            x_inv = gf.inv(x)
            # Forney with first consecutive root alpha^0: e = X * Omega(X^-1) / Lambda'(X^-1)
            r[pos] ^= gf.mul(x, gf.div(gf.poly_eval(omega, x_inv), gf.poly_eval(deriv, x_inv)))
        if any(self.syndromes(r)):
            raise RsDecodeError("syndrome nonzero after correction")
        return r[n - k :]

    def _berlekamp_massey(self, synd: Sequence[int]) -> list[int]:
        gf = self.gf
        c, b = [1], [1]
        length, shift, last = 0, 1, 1
        for i, s in enumerate(synd):
            d = s
            for j in range(1, length + 1):
                if j < len(c):
                    d ^= gf.mul(c[j], synd[i - j])
            if d == 0:
                shift += 1
                continue
            coef = gf.div(d, last)
            update = [0] * shift + [gf.mul(coef, x) for x in b]
            new = [x ^ y for x, y in itertools.zip_longest(c, update, fillvalue=0)]
            if 2 * length <= i:
                b, length, last, shift = c, i + 1 - length, d, 1
            else:
                shift += 1
            c = new
        while len(c) > 1 and c[-1] == 0:
            c.pop()
        return c


# -- Huffman --------------------------------------------------------------------


class HuffmanDecodeError(ValueError):
    def __init__(self, message: str, prefix: bytes = b""):
        super().__init__(message)
        self.prefix = prefix


@dataclass
class HuffmanTable:
    codebook: dict[int, str]
    trie: dict = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.trie = {}
        for sym, code in self.codebook.items():
            node = self.trie
            for bit in code[:-1]:
                node = node.setdefault(bit, {})
            node[code[-1]] = sym

    def mean_length(self, freqs: dict[int, int]) -> float:
        total = sum(freqs.values())
        return sum(c * len(self.codebook[s]) for s, c in freqs.items()) / total


def build_huffman(freqs: dict[int, int]) -> HuffmanTable:
    """Binary Huffman code; ties broken by symbol value so the table is deterministic."""
    items = sorted((c, s) for s, c in freqs.items() if c > 0)
    if not items:
        raise ValueError("no symbols with positive frequency")
    if len(items) == 1:
        return HuffmanTable({items[0][1]: "0"})
    order = itertools.count()
    heap = [(c, next(order), {s: ""}) for c, s in items]
    heapq.heapify(heap)
    while len(heap) > 1:
        c1, _, left = heapq.heappop(heap)
        c2, _, right = heapq.heappop(heap)
        merged = {s: "0" + code for s, code in left.items()}
        merged.update({s: "1" + code for s, code in right.items()})
        heapq.heappush(heap, (c1 + c2, next(order), merged))
    return HuffmanTable(heap[0][2])


def corpus_huffman(sentences: Iterable[str]) -> HuffmanTable:
    """Byte-frequency code plus an escape symbol (raw 8 bits follow) and end-of-message."""
    freqs: Counter = Counter()
    n = 0
    for s in sentences:
        freqs.update(s.encode("utf-8"))
        n += 1
    freqs[ESC] = 1
    freqs[EOM] = max(n, 1)
    return build_huffman(dict(freqs))


def huffman_encode(data: bytes, table: HuffmanTable, terminate: bool = True) -> str:
    book = table.codebook
    parts = []
    for byte in data:
        if byte in book:
            parts.append(book[byte])
        elif ESC in book:
            parts.append(book[ESC] + format(byte, "08b"))
        else:
            raise KeyError(f"byte {byte} not in codebook and no escape symbol")
    if terminate:
        if EOM not in table.codebook:
            raise KeyError("codebook has no end-of-message symbol")
        parts.append(book[EOM])
    return "".join(parts)


def huffman_decode(bits: str, table: HuffmanTable) -> bytes:
    """Decode until EOM (or the end of ``bits`` for tables without EOM)."""
    out = bytearray()
    node = table.trie
    i = 0
    while i < len(bits):
        node = node.get(bits[i])
        i += 1
        if node is None:
            raise HuffmanDecodeError("invalid code path", bytes(out))
        if isinstance(node, dict):
            continue
        sym, node = node, table.trie
        if sym == EOM:
            return bytes(out)
        if sym == ESC:
            if i + 8 > len(bits):
                raise HuffmanDecodeError("stream ends inside an escaped byte", bytes(out))
            out.append(int(bits[i : i + 8], 2))
            i += 8
        else:
            out.append(sym)
    if EOM in table.codebook:
        raise HuffmanDecodeError("stream ended before end-of-message", bytes(out))
    if node is not table.trie:
        raise HuffmanDecodeError("stream ends inside a codeword", bytes(out))
    return bytes(out)


def is_prefix_free(codebook: dict[int, str]) -> bool:
    codes = sorted(codebook.values())
    return all(not b.startswith(a) for a, b in zip(codes, codes[1:]))


# -- 64-QAM ---------------------------------------------------------------------

BITS_PER_SYMBOL = 6
_LEVELS = np.arange(-7, 8, 2, dtype=np.float64)
_NORM = math.sqrt(42.0)  # mean energy of the +-1..+-7 grid in both dimensions
_GRAY = np.array([i ^ (i >> 1) for i in range(8)])
_GRAY_INV = np.argsort(_GRAY)


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    return bits[..., 0] * 4 + bits[..., 1] * 2 + bits[..., 2]


def _int_to_bits(v: np.ndarray) -> np.ndarray:
    return np.stack([(v >> 2) & 1, (v >> 1) & 1, v & 1], axis=-1)


def qam64_constellation() -> np.ndarray:
    """Point for each 6-bit label 0..63 (first 3 bits in-phase, last 3 quadrature)."""
    labels = np.arange(64)
    bits = np.stack([(labels >> (5 - i)) & 1 for i in range(6)], axis=-1)
    return qam64_modulate(bits.reshape(-1))


def qam64_modulate(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    pad = (-len(bits)) % BITS_PER_SYMBOL
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.int64)])
    groups = bits.reshape(-1, BITS_PER_SYMBOL)
    i_level = _LEVELS[_GRAY_INV[_bits_to_int(groups[:, :3])]]
    q_level = _LEVELS[_GRAY_INV[_bits_to_int(groups[:, 3:])]]
    return (i_level + 1j * q_level) / _NORM


def qam64_demodulate(symbols: np.ndarray) -> np.ndarray:
    """Hard decision per dimension; returns 6 bits per symbol."""
    z = np.asarray(symbols) * _NORM

    def nearest(a):
        return np.clip(np.rint((a + 7.0) / 2.0), 0, 7).astype(np.int64)

    i_bits = _int_to_bits(_GRAY[nearest(z.real)])
    q_bits = _int_to_bits(_GRAY[nearest(z.imag)])
    return np.concatenate([i_bits, q_bits], axis=-1).reshape(-1)


def qam64_ser_approx(snr_db: float) -> float:
    """2 (1 - 1/8) Q(sqrt(3 SNR / 63))."""
    snr = 10 ** (snr_db / 10)
    q = 0.5 * math.erfc(math.sqrt(3 * snr / 63) / math.sqrt(2))
    return 2 * (1 - 1 / 8) * q


# -- end to end ------------------------------------------------------------------


@dataclass
class ClassicalChain:
    huffman: HuffmanTable
    rs: ReedSolomon

    @classmethod
    def from_corpus(cls, sentences: Iterable[str], rs_cfg: RsConfig = RS_15_11) -> "ClassicalChain":
        return cls(corpus_huffman(sentences), ReedSolomon(rs_cfg))


def _bits_to_symbols(bits: str, m: int) -> list[int]:
    bits = bits + "0" * ((-len(bits)) % m)
    return [int(bits[i : i + m], 2) for i in range(0, len(bits), m)]


def _symbols_to_bits(symbols: Iterable[int], m: int) -> str:
    return "".join(format(s, f"0{m}b") for s in symbols)


def baseline_transmit(sentence: str, channel_cfg: ChannelConfig, chain: ClassicalChain, rng: np.random.Generator) -> str:
    """Send one sentence through the whole chain as a single fading frame.

    Uncorrectable RS blocks pass their systematic part through unchanged. A
    Huffman stream that breaks off yields the decoded prefix plus U+FFFD.
    """
    rs = chain.rs
    m, n, k = rs.cfg.m, rs.cfg.n, rs.cfg.k
    bits = huffman_encode(sentence.encode("utf-8"), chain.huffman)
    symbols = _bits_to_symbols(bits, m)
    symbols += [0] * ((-len(symbols)) % k)
    coded = []
    for at in range(0, len(symbols), k):
        coded += rs.encode(symbols[at : at + k])
    coded_bits = np.array([int(b) for b in _symbols_to_bits(coded, m)], dtype=np.int64)
    tx = qam64_modulate(coded_bits)
    _, rx, _ = transmit_frame(tx, channel_cfg, rng)
    rx_bits = qam64_demodulate(rx)[: len(coded_bits)]
    rx_symbols = _bits_to_symbols("".join(map(str, rx_bits)), m)
    message = []
    for at in range(0, len(rx_symbols), n):
        block = rx_symbols[at : at + n]
        try:
            message += rs.decode(block)
        except RsDecodeError:
            diagnostics.flag("rs_failure")
            message += block[n - k :]
    try:
        data = huffman_decode(_symbols_to_bits(message, m), chain.huffman)
        return data.decode("utf-8", errors="replace")
    except HuffmanDecodeError as exc:
        diagnostics.flag("huffman_desync")
        return exc.prefix.decode("utf-8", errors="replace") + REPLACEMENT


def classical_system(chain: ClassicalChain, channel_kind: str, vocab, verbs):
    """Sweep adapter: literal noise on the token text, then the conventional chain.

    Returns ``f(sentences, snr_db, ratio, seed) -> received sentences``.
    """
    from rdeepsc.text.noise import NoiseSpec, inject_literal_noise
    from rdeepsc.text.vocab import encode

    def run(sentences, snr_db, ratio, seed):
        cfg = ChannelConfig(channel_kind, snr_db, seed)
        rng = np.random.default_rng([seed, int(round(snr_db * 1000)) % 2**31])
        spec = NoiseSpec(ratio, seed=seed)
        out = []
        for i, s in enumerate(sentences):
            noisy = inject_literal_noise(encode(s, vocab), spec.with_seed(seed + i), vocab, verbs).noisy
            out.append(baseline_transmit(noisy.text(), cfg, chain, rng))
        return out

    return run
