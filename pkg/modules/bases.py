import numpy as np


class Nucleotides:
    """Base alphabet definitions"""
    BASES = {'A': 0, 'C': 1, 'G': 2, 'T': 3, 'N': 4}

    # Called-base alphabet Omega; N is legal in reads but never inside a kmer
    ALPHABET = 'ACGT'
    N_CODE = 4


BASE_TO_CODE = dict(Nucleotides.BASES)
CODE_TO_BASE = 'ACGTN'

# byte -> code lookup; 255 marks an illegal byte
_BYTE_TO_CODE = np.full(256, 255, dtype=np.uint8)
for _b, _c in BASE_TO_CODE.items():
    _BYTE_TO_CODE[ord(_b)] = _c


def is_base_string(seq: str) -> bool:
    """True when every character is one of A, C, G, T, N."""
    return all(ch in BASE_TO_CODE for ch in seq)


def to_codes(seq: str) -> np.ndarray:
    """Map an ACGTN string to a uint8 array of codes 0..4.

    Raises:
        ValueError: if the string holds any other character
    """
    raw = np.frombuffer(seq.encode('ascii'), dtype=np.uint8)
    codes = _BYTE_TO_CODE[raw]
    if codes.size and codes.max() == 255:
        bad = seq[int(np.argmax(codes == 255))]
        raise ValueError(f"illegal base {bad!r}")
    return codes


def from_codes(codes) -> str:
    return ''.join(CODE_TO_BASE[int(c)] for c in codes)
