"""Command <-> payment-amount codecs.

Two schemes: one payment per character carrying its ASCII code, or a
quaternary prefix code where each digit becomes a payment of that many
satoshi. Frames are delimited by the reserved amounts START and END.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

from .errors import (EncodeError, DecodeError, IncompleteCodeError, InvalidCodeError,
                     MalformedFrameError)

START = 5
END = 6
ASCII_MIN, ASCII_MAX = 32, 126

# Quaternary codebook published with the reference command.
REFERENCE_CODES = {
    "s": "234", "n": "233", "o": "232", "h": "231",
    "d": "224", "g": "223", "c": "222", "9": "221",
    "6": "214", "2": "213", "3": "212", "u": "211",
    "p": "144", "i": "143", "8": "142", "0": "141",
    ".": "24", "1": "12", "-": "13", "E": "4",
    " ": "11", "S": "3",
}

SYN_FLOOD_COMMAND = "sudo hping3 -i u1 -S -p 80 -c 10 192.168.1.1"


def verify_prefix_free(codes):
    """True iff no codeword is a prefix of another (accepts a Codebook or a mapping)."""
    words = sorted(getattr(codes, "codes", codes).values())
    # after sorting, a prefix sits immediately before some word it prefixes
    return all(not words[i + 1].startswith(words[i]) for i in range(len(words) - 1))


class Codebook:
    def __init__(self, codes, arity=4):
        if arity < 2:
            raise ValueError("arity must be at least 2")
        if not codes:
            raise ValueError("codebook is empty")
        valid = {str(d) for d in range(1, arity + 1)}
        for char, word in codes.items():
            if len(char) != 1:
                raise ValueError(f"codebook keys must be single characters, got {char!r}")
            if not word or not set(word) <= valid:
                raise ValueError(f"code {word!r} for {char!r} uses digits outside 1..{arity}")
        if not verify_prefix_free(codes):
            raise ValueError("codebook is not prefix-free")
        self.codes = dict(codes)
        self.arity = arity
        self._tree = self._build_tree()

    def _build_tree(self):
        root = {}
        for char, word in self.codes.items():
            node = root
            for digit in word[:-1]:
                node = node.setdefault(int(digit), {})
            node[int(word[-1])] = char
        return root

    def __eq__(self, other):
        return isinstance(other, Codebook) and (self.codes, self.arity) == (other.codes, other.arity)

    def __repr__(self):
        return f"Codebook({len(self.codes)} symbols, arity={self.arity})"

    def expected_length(self, weights):
        return sum(w * len(self.codes[c]) for c, w in weights.items())

    @classmethod
    def load(cls, path, arity=4):
        codes = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    cp, word = line.split()
                    char = chr(int(cp))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected '<codepoint> <digits>'") from None
                if char in codes:
                    raise ValueError(f"{path}:{lineno}: duplicate symbol {char!r}")
                codes[char] = word
        return cls(codes, arity)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for char in sorted(self.codes):
                fh.write(f"{ord(char)} {self.codes[char]}\n")


REFERENCE_CODEBOOK = Codebook(REFERENCE_CODES)


def load_frequency_table(path):
    weights = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                cp, w = line.split()
                weights[chr(int(cp))] = float(w) if "." in w else int(w)
    return weights


def build_codebook(frequency_table, arity=4):
    """n-ary Huffman construction.

    Zero-weight dummies pad the leaf count so every merge takes exactly
    ``arity`` nodes. Equal weights are ordered dummies first, then leaves by
    code point, then internal nodes by creation. Within a merge the heaviest
    child receives digit 1, which also keeps the satoshi cost low.
    """
    if arity < 2:
        raise ValueError("arity must be at least 2")
    symbols = {c: w for c, w in frequency_table.items() if w > 0}
    if not symbols:
        raise ValueError("frequency table has no positively weighted symbol")
    if any(w < 0 for w in frequency_table.values()):
        raise ValueError("weights must be non-negative")

    heap = [(w, 1, ord(c), c) for c, w in symbols.items()]
    if len(heap) == 1:
        return Codebook({next(iter(symbols)): "1"}, arity)
    n_dummies = (-(len(heap) - 1)) % (arity - 1)
    heap += [(0, 0, i, None) for i in range(n_dummies)]
    heapq.heapify(heap)
    created = 0
    while len(heap) > 1:
        children = [heapq.heappop(heap) for _ in range(arity)]
        weight = sum(ch[0] for ch in children)
        # heaviest child first; children were popped lightest first
        subtree = [ch[3] for ch in reversed(children)]
        heapq.heappush(heap, (weight, 2, created, subtree))
        created += 1

    codes = {}
    stack = [(heap[0][3], "")]
    while stack:
        node, prefix = stack.pop()
        if isinstance(node, list):
            for digit, child in enumerate(node, 1):
                stack.append((child, prefix + str(digit)))
        elif node is not None:
            codes[node] = prefix
    return Codebook(codes, arity)


class AsciiScheme:
    name = "ascii"

    def encode(self, command):
        out = []
        for i, ch in enumerate(command):
            code = ord(ch)
            if not ASCII_MIN <= code <= ASCII_MAX:
                raise EncodeError(f"character {ch!r} at {i} is not printable ASCII")
            out.append(code)
        return out

    def decode(self, amounts):
        chars = []
        for i, a in enumerate(amounts):
            if not isinstance(a, int) or not ASCII_MIN <= a <= ASCII_MAX:
                raise InvalidCodeError(f"amount {a!r} at {i} is outside {ASCII_MIN}..{ASCII_MAX}")
            chars.append(chr(a))
        return "".join(chars)

    def alphabet(self):
        return {chr(c) for c in range(ASCII_MIN, ASCII_MAX + 1)}

    def symbol_values(self):
        return range(ASCII_MIN, ASCII_MAX + 1)

    def __eq__(self, other):
        return isinstance(other, AsciiScheme)

    def __repr__(self):
        return "AsciiScheme()"


@dataclass(frozen=True, eq=False)
class HuffmanScheme:
    codebook: Codebook = REFERENCE_CODEBOOK
    name = "huffman"

    def __post_init__(self):
        if self.codebook.arity >= START:
            raise ValueError(f"arity {self.codebook.arity} would emit sentinel amounts")

    def encode(self, command):
        out = []
        codes = self.codebook.codes
        for i, ch in enumerate(command):
            try:
                word = codes[ch]
            except KeyError:
                raise EncodeError(f"character {ch!r} at {i} is not in the codebook") from None
            out.extend(int(d) for d in word)
        return out

    def decode(self, amounts):
        root = self.codebook._tree
        node = root
        chars = []
        for i, a in enumerate(amounts):
            if not isinstance(a, int) or not 1 <= a <= self.codebook.arity:
                raise InvalidCodeError(f"digit {a!r} at {i} is outside 1..{self.codebook.arity}")
            try:
                node = node[a]
            except KeyError:
                raise InvalidCodeError(f"digit path ending at {i} matches no code") from None
            if not isinstance(node, dict):
                chars.append(node)
                node = root
        if node is not root:
            raise IncompleteCodeError("amount stream ends inside a codeword")
        return "".join(chars)

    def alphabet(self):
        return set(self.codebook.codes)

    def symbol_values(self):
        return range(1, self.codebook.arity + 1)

    def __eq__(self, other):
        return isinstance(other, HuffmanScheme) and self.codebook == other.codebook


def make_scheme(name, codebook=None):
    if name == "ascii":
        return AsciiScheme()
    if name == "huffman":
        return HuffmanScheme(codebook or REFERENCE_CODEBOOK)
    raise ValueError(f"unknown scheme {name!r}")


def encode(command, scheme):
    return scheme.encode(command)


def decode(amounts, scheme):
    return scheme.decode(list(amounts))


def frame(amounts):
    if START in amounts or END in amounts:
        raise EncodeError("payload collides with a sentinel amount")
    return [START, *amounts, END]


def deframe(seq):
    seq = list(seq)
    if len(seq) < 2 or seq[0] != START or seq[-1] != END:
        raise MalformedFrameError("frame must start with 5 and end with 6")
    inner = seq[1:-1]
    if START in inner or END in inner:
        raise MalformedFrameError("sentinel inside frame payload")
    return inner


def cost(amounts):
    return sum(amounts)


__all__ = [
    "START", "END", "REFERENCE_CODEBOOK", "REFERENCE_CODES", "SYN_FLOOD_COMMAND", "Codebook", "AsciiScheme",
    "HuffmanScheme", "build_codebook", "verify_prefix_free", "encode", "decode", "frame",
    "deframe", "make_scheme", "load_frequency_table", "cost", "DecodeError",
]
