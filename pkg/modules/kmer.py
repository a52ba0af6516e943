from dataclasses import dataclass
from typing import Sequence

import numpy as np

from modules.bases import BASE_TO_CODE, CODE_TO_BASE, Nucleotides
from modules.errors import KmerError

MAX_K = 32

# collapses each 2-bit base slot onto its low bit before a popcount
_LOW_BITS = 0x5555555555555555


@dataclass(frozen=True, order=True)
class Kmer:
    """Packed kmer: 2 bits per base, first base in the most significant slot.

    Ordering is by (k, bits) so sets and maps of kmers iterate deterministically.
    """
    k: int
    bits: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= MAX_K:
            raise KmerError(f"k must be in 1..{MAX_K}, got {self.k}")
        if not 0 <= self.bits < (1 << (2 * self.k)):
            raise KmerError(f"bits {self.bits} out of range for k={self.k}")

    @classmethod
    def from_string(cls, window: str) -> 'Kmer':
        return encode_kmer(window)

    def last_base(self) -> int:
        return self.bits & 3

    def __len__(self) -> int:
        return self.k

    def __str__(self) -> str:
        return decode_kmer(self)


def encode_kmer(window: Sequence[str] | str, k: int | None = None) -> Kmer:
    """Pack an N-free base window.

    Args:
        window: the bases, as a string or sequence of single characters
        k: expected length; defaults to len(window)

    Raises:
        KmerError: if the window contains N or a non-base, or has the wrong length
    """
    if k is None:
        k = len(window)
    if len(window) != k:
        raise KmerError(f"window length {len(window)} != k={k}")
    if not 1 <= k <= MAX_K:
        raise KmerError(f"k must be in 1..{MAX_K}, got {k}")
    bits = 0
    for ch in window:
        code = BASE_TO_CODE.get(ch.upper())
        if code is None or code == Nucleotides.N_CODE:
            raise KmerError(f"cannot encode {ch!r} inside a kmer")
        bits = (bits << 2) | code
    return Kmer(k, bits)


def decode_kmer(kmer: Kmer) -> str:
    return bits_to_string(kmer.bits, kmer.k)


def bits_to_string(bits: int, k: int) -> str:
    return ''.join(CODE_TO_BASE[(bits >> (2 * (k - 1 - i))) & 3] for i in range(k))


def kmer_mask(k: int) -> int:
    return (1 << (2 * k)) - 1


def hamming_bits(a: int, b: int) -> int:
    """Hamming distance between two packed kmers of equal length."""
    x = a ^ b
    return ((x | (x >> 1)) & _LOW_BITS).bit_count()


def hamming_distance(a: Kmer, b: Kmer) -> int:
    if a.k != b.k:
        raise KmerError(f"hamming distance needs equal k, got {a.k} and {b.k}")
    return hamming_bits(a.bits, b.bits)


def hamming_many(center: int, others: np.ndarray) -> np.ndarray:
    """Vectorised Hamming distance from one packed kmer to an array of them."""
    x = np.bitwise_xor(others.astype(np.uint64), np.uint64(center))
    y = np.bitwise_and(np.bitwise_or(x, np.right_shift(x, np.uint64(1))), np.uint64(_LOW_BITS))
    return np.bitwise_count(y).astype(np.int64)


def window_bits(codes: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Pack every length-k window of a read.

    Args:
        codes: uint8 base codes (0..3, 4 for N) of one read
        k: kmer length

    Returns:
        (bits, valid): uint64 packed windows and a mask of N-free windows;
        windows containing N have meaningless bits.
    """
    n = codes.shape[0] - k + 1
    if n <= 0:
        return np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=bool)
    is_n = codes == Nucleotides.N_CODE
    clean = np.where(is_n, 0, codes).astype(np.uint64)
    bits = np.zeros(n, dtype=np.uint64)
    for i in range(k):
        bits = np.left_shift(bits, np.uint64(2)) | clean[i:i + n]
    n_count = np.convolve(is_n.astype(np.int64), np.ones(k, dtype=np.int64), mode='valid')
    return bits, n_count == 0


def window_bits_matrix(codes: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Same as window_bits for a (reads x L) code matrix of equal-length reads."""
    n = codes.shape[1] - k + 1
    is_n = codes == Nucleotides.N_CODE
    clean = np.where(is_n, 0, codes).astype(np.uint64)
    bits = np.zeros((codes.shape[0], n), dtype=np.uint64)
    for i in range(k):
        bits = np.left_shift(bits, np.uint64(2)) | clean[:, i:i + n]
    csum = np.concatenate([np.zeros((codes.shape[0], 1), dtype=np.int64),
                           np.cumsum(is_n, axis=1, dtype=np.int64)], axis=1)
    n_count = csum[:, k:] - csum[:, :n]
    return bits, n_count == 0
