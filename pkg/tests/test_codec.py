import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from covertpay.codec import (END, REFERENCE_CODEBOOK, REFERENCE_CODES, START, SYN_FLOOD_COMMAND, AsciiScheme,
                             Codebook, HuffmanScheme, build_codebook, cost, decode, deframe, encode, frame,
                             load_frequency_table, make_scheme, verify_prefix_free)
from covertpay.errors import (DecodeError, EncodeError, IncompleteCodeError, InvalidCodeError,
                              MalformedFrameError)

ASCII = AsciiScheme()
HUFF = HuffmanScheme()

# The reference command split into the published segments with their expected encodings.
SEGMENTS = [
    ("sudo ", [115, 117, 100, 111, 32], [2, 3, 4, 2, 1, 1, 2, 2, 4, 2, 3, 2, 1, 1]),
    ("hping3 ", [104, 112, 105, 110, 103, 51, 32],
     [2, 3, 1, 1, 4, 4, 1, 4, 3, 2, 3, 3, 2, 2, 3, 2, 1, 2, 1, 1]),
    ("-i ", [45, 105, 32], [1, 3, 1, 4, 3, 1, 1]),
    ("u1 ", [117, 49, 32], [2, 1, 1, 1, 2, 1, 1]),
    ("-S ", [45, 83, 32], [1, 3, 3, 1, 1]),
    ("-p ", [45, 112, 32], [1, 3, 1, 4, 4, 1, 1]),
    ("80 ", [56, 48, 32], [1, 4, 2, 1, 4, 1, 1, 1]),
    ("-c ", [45, 99, 32], [1, 3, 2, 2, 2, 1, 1]),
    ("10 ", [49, 48, 32], [1, 2, 1, 4, 1, 1, 1]),
    ("192.168.1.1", [49, 57, 50, 46, 49, 54, 56, 46, 49, 46, 49],
     [1, 2, 2, 2, 1, 2, 1, 3, 2, 4, 1, 2, 2, 1, 4, 1, 4, 2, 2, 4, 1, 2, 2, 4, 1, 2]),
]

printable = st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=80)
codebook_text = st.text(alphabet=sorted(REFERENCE_CODES), max_size=80)


@pytest.mark.parametrize("segment,ascii_amounts,huffman_amounts", SEGMENTS)
def test_segments_encode_as_published(segment, ascii_amounts, huffman_amounts):
    assert encode(segment, ASCII) == ascii_amounts
    assert encode(segment, HUFF) == huffman_amounts


def test_reference_command_totals():
    assert "".join(s for s, _, _ in SEGMENTS) == SYN_FLOOD_COMMAND
    ascii_oracle = [ord(c) for c in SYN_FLOOD_COMMAND]
    huffman_oracle = [int(d) for c in SYN_FLOOD_COMMAND for d in REFERENCE_CODES[c]]
    a = encode(SYN_FLOOD_COMMAND, ASCII)
    h = encode(SYN_FLOOD_COMMAND, HUFF)
    assert a == ascii_oracle == [x for _, seg, _ in SEGMENTS for x in seg]
    assert h == huffman_oracle == [x for _, _, seg in SEGMENTS for x in seg]
    assert (len(a), cost(a)) == (44, 2813)
    assert (len(h), cost(h)) == (108, 215)


def test_reference_codebook_shape():
    assert len(REFERENCE_CODES) == 22
    assert verify_prefix_free(REFERENCE_CODEBOOK)
    assert sum(Fraction(1, 4 ** len(w)) for w in REFERENCE_CODES.values()) == 1
    # the command itself uses every symbol except 'E'
    assert set(REFERENCE_CODES) - set(SYN_FLOOD_COMMAND) == {"E"}


def test_empty_command():
    assert encode("", ASCII) == [] and encode("", HUFF) == []
    assert frame([]) == [5, 6]
    assert deframe([5, 6]) == []


def test_frame_and_deframe():
    assert frame([115]) == [5, 115, 6]
    assert deframe([5, 115, 6]) == [115]
    for bad in ([115, 6], [5, 115], [6], [], [5, 5, 6], [5, 6, 6]):
        with pytest.raises(MalformedFrameError):
            deframe(bad)
    with pytest.raises(EncodeError):
        frame([1, 5, 2])


def test_decode_examples():
    assert decode([2, 3, 4], HUFF) == "s"
    assert decode([104, 112, 105, 110, 103, 51, 32], ASCII) == "hping3 "
    with pytest.raises(IncompleteCodeError):
        decode([2, 3], HUFF)
    with pytest.raises(InvalidCodeError):
        decode([2, 7], HUFF)
    with pytest.raises(InvalidCodeError):
        decode([6], HUFF)
    with pytest.raises(DecodeError):
        decode([31], ASCII)
    with pytest.raises(DecodeError):
        decode([127], ASCII)


def test_incomplete_tree_reports_invalid_code():
    sparse = HuffmanScheme(Codebook({"a": "1", "b": "21"}))
    assert decode([2, 1, 1], sparse) == "ba"
    with pytest.raises(InvalidCodeError):
        decode([3], sparse)
    with pytest.raises(InvalidCodeError):
        decode([2, 2], sparse)


def test_unencodable_characters():
    for text in ("\n", "\x7f", "é"):
        with pytest.raises(EncodeError):
            encode(text, ASCII)
    with pytest.raises(EncodeError):
        encode("sudo ls", HUFF)


def test_scheme_factory():
    assert make_scheme("ascii") == ASCII
    assert make_scheme("huffman") == HUFF
    with pytest.raises(ValueError):
        make_scheme("base64")
    with pytest.raises(ValueError):
        HuffmanScheme(Codebook({"a": "5"}, arity=5))


def prefix_free_oracle(words):
    return not any(a != b and b.startswith(a) for a, b in itertools.permutations(words, 2)) \
        and len(set(words)) == len(words)


def test_verify_prefix_free_examples():
    assert verify_prefix_free({"a": "1", "b": "12"}) is False
    assert verify_prefix_free({"a": "1"}) is True
    assert verify_prefix_free({"a": "12", "b": "12"}) is False


@given(st.dictionaries(st.characters(min_codepoint=97, max_codepoint=122),
                       st.text(alphabet="1234", min_size=1, max_size=4), min_size=1, max_size=8))
def test_verify_prefix_free_matches_pairwise_scan(codes):
    assert verify_prefix_free(codes) == prefix_free_oracle(list(codes.values()))


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook({"a": "15"})
    with pytest.raises(ValueError):
        Codebook({"a": "1", "b": "12"})
    with pytest.raises(ValueError):
        Codebook({"ab": "1"})
    with pytest.raises(ValueError):
        Codebook({})


def test_codebook_file_round_trip(tmp_path):
    path = tmp_path / "book.txt"
    REFERENCE_CODEBOOK.dump(path)
    assert "115 234" in path.read_text().splitlines()
    assert Codebook.load(path) == REFERENCE_CODEBOOK
    path.write_text("97 1\n97 2\n")
    with pytest.raises(ValueError):
        Codebook.load(path)
    path.write_text("97 1\n98 12\n")
    with pytest.raises(ValueError):
        Codebook.load(path)


def test_frequency_table_loader(tmp_path):
    path = tmp_path / "freq.txt"
    path.write_text("# weights\n97 3\n98 0.5\n")
    assert load_frequency_table(path) == {"a": 3, "b": 0.5}


def test_build_codebook_small_cases():
    book = build_codebook({c: 1 for c in "abcd"}, 4)
    assert sorted(len(w) for w in book.codes.values()) == [1, 1, 1, 1]
    book = build_codebook({"a": 9, "b": 1}, 2)
    assert sorted(book.codes.values()) == ["1", "2"]
    assert build_codebook({"z": 5}, 4).codes == {"z": "1"}
    with pytest.raises(ValueError):
        build_codebook({}, 4)
    with pytest.raises(ValueError):
        build_codebook({"a": 0}, 4)
    with pytest.raises(ValueError):
        build_codebook({"a": 1}, 1)


def test_build_codebook_on_the_reference_command():
    freq = {}
    for c in SYN_FLOOD_COMMAND:
        freq[c] = freq.get(c, 0) + 1
    book = build_codebook(freq, 4)
    assert verify_prefix_free(book)
    assert set(book.codes) == set(freq)
    # an optimal code for these frequencies is no longer than the published one on this text
    assert book.expected_length(freq) <= REFERENCE_CODEBOOK.expected_length(freq)
    assert decode(encode(SYN_FLOOD_COMMAND, HuffmanScheme(book)), HuffmanScheme(book)) == SYN_FLOOD_COMMAND
    assert build_codebook(freq, 4) == book


def optimal_expected_length(weights, arity):
    """Exhaustive search over all codeword-length vectors satisfying Kraft's inequality."""
    n = len(weights)
    best = None
    for lengths in itertools.product(range(1, n + 1), repeat=n):
        top = max(lengths)
        if sum(arity ** (top - l) for l in lengths) > arity ** top:
            continue
        value = sum(w * l for w, l in zip(weights, lengths))
        if best is None or value < best:
            best = value
    return best


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=6), st.integers(2, 4))
def test_build_codebook_is_optimal_against_exhaustive_search(weights, arity):
    freq = {chr(97 + i): w for i, w in enumerate(weights)}
    book = build_codebook(freq, arity)
    assert verify_prefix_free(book)
    assert book.expected_length(freq) == optimal_expected_length(weights, arity)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.characters(min_codepoint=32, max_codepoint=126),
                       st.integers(1, 1000), min_size=1, max_size=40), st.integers(2, 4))
def test_build_codebook_always_prefix_free_and_round_trips(freq, arity):
    book = build_codebook(freq, arity)
    assert verify_prefix_free(book)
    assert set(book.codes) == set(freq)
    scheme = HuffmanScheme(book)
    text = "".join(sorted(freq))
    assert decode(encode(text, scheme), scheme) == text


@given(printable)
def test_ascii_round_trip(text):
    framed = frame(encode(text, ASCII))
    assert START not in framed[1:-1] and END not in framed[1:-1]
    assert decode(deframe(framed), ASCII) == text


@given(codebook_text)
def test_huffman_round_trip(text):
    framed = frame(encode(text, HUFF))
    assert all(1 <= a <= 4 for a in framed[1:-1])
    assert decode(deframe(framed), HUFF) == text


@given(printable, printable)
def test_ascii_cost_is_additive(a, b):
    assert cost(encode(a + b, ASCII)) == cost(encode(a, ASCII)) + cost(encode(b, ASCII)) \
        == sum(map(ord, a + b))


@given(codebook_text, codebook_text)
def test_huffman_cost_is_additive(a, b):
    digits = sum(int(d) for c in a + b for d in REFERENCE_CODES[c])
    assert cost(encode(a + b, HUFF)) == cost(encode(a, HUFF)) + cost(encode(b, HUFF)) == digits
