import pytest

from colberter.tokenization import Vocabulary

_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_DIGITS = "0123456789"

# Single characters plus "##" continuations guarantee every ASCII
# alphanumeric word tokenizes without [UNK]; the multi-character pieces
# exercise greedy longest-prefix selection.
VOCAB_TOKENS = (
    ["[UNK]"]
    + list(_LETTERS)
    + list(_DIGITS)
    + ["##" + c for c in _LETTERS]
    + ["##" + c for c in _DIGITS]
    + [
        "does", "do", "##xy", "##cy", "##cl", "##ine", "contain", "sulfa",
        "run", "##ning", "the", "of", "and", "word", "##word",
        "stop", "##ing", "##ed", "query", "passage",
    ]
)


def make_vocab() -> Vocabulary:
    return Vocabulary.from_tokens(VOCAB_TOKENS)


@pytest.fixture(scope="session")
def vocab() -> Vocabulary:
    return make_vocab()


@pytest.fixture()
def vocab_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("\n".join(VOCAB_TOKENS) + "\n", encoding="utf-8")
    return path
