import pytest

from eagerfs.pathutil import (is_direct_child, is_normalized, join, normalize,
                              parent_of)


@pytest.mark.parametrize("raw,expected", [
    ("/", "/"),
    ("", "/"),
    ("/a/b", "/a/b"),
    ("a/b", "/a/b"),            # relative spellings become absolute
    ("/a/b/", "/a/b"),
    ("//a//b", "/a/b"),
    ("/a/./b", "/a/b"),
    ("/a/c/../b", "/a/b"),
    ("/../a", "/a"),            # cannot climb above the root
    ("/..", "/"),
])
def test_normalize(raw, expected):
    assert normalize(raw) == expected


def test_normalize_is_idempotent():
    for raw in ("/", "/a", "//x/./y/../z", "a/b/c/"):
        once = normalize(raw)
        assert normalize(once) == once
        assert is_normalized(once)


def test_is_normalized_rejects_raw_spellings():
    assert not is_normalized("")
    assert not is_normalized("a/b")
    assert not is_normalized("/a/b/")
    assert not is_normalized("/a//b")
    assert not is_normalized("/a/./b")


def test_parent_of():
    assert parent_of("/") is None
    assert parent_of("/a") == "/"
    assert parent_of("/a/b/c") == "/a/b"


def test_is_direct_child():
    assert is_direct_child("/a/b", "/a")
    assert is_direct_child("/a", "/")
    assert not is_direct_child("/a/b/c", "/a")
    assert not is_direct_child("/a", "/a")


def test_join():
    assert join("/", "x") == "/x"
    assert join("/a", "b") == "/a/b"
    assert join("/a/", "b/") == "/a/b"
