"""Value model: decoding, canonical encoding, merging, digests."""

import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reprodoc.errors import DecodeError, EncodeError, MergeError
from reprodoc.formats import (DataFormat, FuncHandle, Table, canonical_json, decode,
                              digest, encode, merge_inputs)

J, L, C, T, B = (DataFormat.JSON, DataFormat.JSONL, DataFormat.CSV,
                 DataFormat.TXT, DataFormat.BIN)


# --- decode ---------------------------------------------------------------------

def test_decode_json_object():
    assert decode(b'{"a":1}', J) == {"a": 1}


def test_decode_csv_table():
    table = decode(b"x,y\n1,2\n3,4\n", C)
    assert table == Table(header=("x", "y"), rows=(("1", "2"), ("3", "4")))


def test_decode_csv_accepts_crlf():
    table = decode(b"x,y\r\n1,2\r\n", C)
    assert table == Table(header=("x", "y"), rows=(("1", "2"),))


def test_decode_jsonl_matches_per_line_json():
    data = b'1\n2\n3\n'
    # oracle: each line decoded independently by the stock JSON parser
    expected = [json.loads(line) for line in data.splitlines() if line.strip()]
    assert decode(data, L) == expected == [1, 2, 3]


def test_decode_jsonl_skips_blank_lines_and_optional_final_newline():
    assert decode(b"1\n\n  \n2", L) == [1, 2]


def test_decode_empty_csv_is_an_error():
    with pytest.raises(DecodeError, match="header"):
        decode(b"", C)


def test_decode_csv_duplicate_header():
    with pytest.raises(DecodeError, match="duplicate"):
        decode(b"a,a\n1,2\n", C)


def test_decode_csv_ragged_row_reports_line():
    with pytest.raises(DecodeError) as err:
        decode(b"a,b\n1\n", C)
    assert err.value.line == 2


def test_decode_txt_rejects_invalid_utf8():
    with pytest.raises(DecodeError, match="UTF-8"):
        decode(b"\xff\xfe", T)


def test_decode_json_rejects_nan_and_overflow():
    with pytest.raises(DecodeError):
        decode(b"NaN", J)
    with pytest.raises(DecodeError):
        decode(b"Infinity", J)
    with pytest.raises(DecodeError):
        decode(b"1e400", J)


def test_decode_jsonl_error_carries_line_number():
    with pytest.raises(DecodeError) as err:
        decode(b"1\n{oops\n", L)
    assert err.value.line == 2


def test_decode_bin_is_identity():
    assert decode(b"\x00\xff", B) == b"\x00\xff"


def test_decode_func_is_rejected():
    with pytest.raises(DecodeError):
        decode(b"", DataFormat.FUNC)


# --- encode ---------------------------------------------------------------------

def test_encode_json_sorts_keys():
    # keys sorted by code point, no whitespace
    assert encode({"b": 2, "a": 1}, J) == b'{"a":1,"b":2}'


def test_encode_empty_rowstream_is_empty_bytes():
    assert encode([], L) == b""


def test_encode_csv_minimal_quoting():
    # only the comma forces quotes
    table = Table(header=("v",), rows=(("a,b",),))
    assert encode(table, C) == b'v\n"a,b"\n'


def test_encode_csv_quotes_quotes_and_newlines():
    table = Table(header=("v",), rows=(('say "hi"\nok',),))
    assert encode(table, C) == b'v\n"say ""hi""\nok"\n'


def test_encode_rejects_func_handles_everywhere():
    with pytest.raises(EncodeError):
        encode(FuncHandle("s", "h"), J)
    with pytest.raises(EncodeError):
        encode("text", DataFormat.FUNC)


def test_encode_rejects_mismatched_variants():
    with pytest.raises(EncodeError):
        encode({"a": 1}, C)
    with pytest.raises(EncodeError):
        encode(b"raw", T)
    with pytest.raises(EncodeError):
        encode("text", B)


def test_encode_rejects_non_finite_numbers():
    with pytest.raises(EncodeError):
        encode(float("inf"), J)


def test_encode_rejects_non_string_keys():
    with pytest.raises(EncodeError):
        encode({1: "x"}, J)


def test_number_encoding_is_shortest_roundtrip():
    assert encode(0.1, J) == b"0.1"
    assert encode(1.0, J) == b"1.0"
    assert encode(10 ** 30, J) == b"1000000000000000000000000000000"
    assert encode(1e30, J) == b"1e+30"


# --- digests -------------------------------------------------------------------

def test_digest_of_empty_input_is_the_known_sha256():
    assert digest(b"") == ("e3b0c44298fc1c149afbf4c8996fb9242"
                           "7ae41e4649b934ca495991b7852b855")


def test_digest_matches_independent_sha256():
    data = b'{"a":1}'
    assert digest(data) == hashlib.sha256(data).hexdigest()
    assert len(digest(data)) == 64


def test_digest_injective_on_fixture_corpus(tmp_path):
    corpus = [b"", b"a", b"b", b'{"a":1}', b"1\n2\n3\n", b"x,y\n1,2\n",
              b"\x00\x01", "café".encode("utf-8")]
    digests = [digest(item) for item in corpus]
    assert len(set(digests)) == len(corpus)


# --- merging -------------------------------------------------------------------

def test_merge_rowstreams_concatenates_in_order():
    assert merge_inputs([[1, 2], [3]], L) == [1, 2, 3]


def test_merge_tables_concatenates_rows():
    h = ("a", "b")
    merged = merge_inputs([Table(h, (("1", "2"),)),
                           Table(h, (("3", "4"), ("5", "6")))], C)
    assert merged == Table(h, (("1", "2"), ("3", "4"), ("5", "6")))


def test_merge_header_mismatch():
    with pytest.raises(MergeError):
        merge_inputs([Table(("a",), ()), Table(("b",), ())], C)


def test_merge_unsupported_format():
    with pytest.raises(MergeError):
        merge_inputs([{"a": 1}, {"b": 2}], J)


# --- properties -------------------------------------------------------------------

json_values = st.recursive(
    st.none() | st.booleans()
    | st.integers(min_value=-(10 ** 15), max_value=10 ** 15)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=20),
    lambda children: (st.lists(children, max_size=4)
                      | st.dictionaries(st.text(max_size=8), children, max_size=4)),
    max_leaves=25)

cell_text = st.text(max_size=12).filter(lambda s: "\x00" not in s)


@st.composite
def tables(draw):
    width = draw(st.integers(min_value=1, max_value=4))
    header = draw(st.lists(cell_text, min_size=width, max_size=width,
                           unique=True))
    rows = draw(st.lists(
        st.lists(cell_text, min_size=width, max_size=width).map(tuple),
        max_size=6))
    return Table(header=tuple(header), rows=tuple(rows))


@given(json_values)
@settings(max_examples=150)
def test_json_decode_encode_roundtrip(value):
    data = encode(value, J)
    assert decode(data, J) == value
    assert encode(decode(data, J), J) == data  # canonical fixed point


@given(st.lists(json_values, max_size=6))
def test_jsonl_roundtrip(rows):
    data = encode(rows, L)
    assert decode(data, L) == rows
    assert encode(decode(data, L), L) == data


@given(tables())
@settings(max_examples=150)
def test_csv_roundtrip(table):
    data = encode(table, C)
    assert decode(data, C) == table
    assert encode(decode(data, C), C) == data


@given(st.text(max_size=200))
def test_txt_roundtrip(text):
    try:
        data = encode(text, T)
    except EncodeError:
        return  # lone surrogates are not UTF-8 encodable
    assert decode(data, T) == text


@given(st.binary(max_size=100))
def test_bin_roundtrip(data):
    assert decode(encode(data, B), B) == data


def test_noncanonical_json_reaches_fixed_point_after_one_encode():
    messy = b'{ "b" : 2,\n  "a": 1e2 }'
    canonical = encode(decode(messy, J), J)
    assert canonical == b'{"a":100.0,"b":2}'
    assert encode(decode(canonical, J), J) == canonical


@given(st.lists(st.lists(json_values, max_size=3), min_size=2, max_size=4))
def test_merge_is_associative_over_concatenation(pieces):
    flat = merge_inputs(pieces, L)
    assert flat == sum(pieces, [])
    for split in range(1, len(pieces)):
        left = merge_inputs(pieces[:split], L)
        right = merge_inputs(pieces[split:], L)
        assert merge_inputs([left, right], L) == flat


def test_canonical_json_stability_across_calls():
    value = {"z": [1, 2.5, None], "a": {"nested": True}}
    assert canonical_json(value) == canonical_json(json.loads(canonical_json(value)))
