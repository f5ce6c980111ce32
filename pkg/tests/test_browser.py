import pytest

from inuksuk.browser import MARK, BrowserRow, FileBrowser, expand_keys, run_browser
from inuksuk.errors import Aborted


class ScriptUi:
    def __init__(self, keys):
        self.keys = list(keys)
        self.lines = []

    def write(self, line=""):
        self.lines.append(line)

    def read_key(self):
        return self.keys.pop(0) if self.keys else None


def rows(n=5):
    return [BrowserRow(f"f{i}", 10 * i, i) for i in range(n)]


def test_toggle_toggle_confirm_selects_two():
    assert run_browser(rows(), ScriptUi(["toggle", "toggle", "confirm"])) == ["f0", "f1"]


def test_abort_selects_nothing():
    with pytest.raises(Aborted):
        run_browser(rows(), ScriptUi(["toggle", "abort"]))


def test_end_of_input_aborts():
    with pytest.raises(Aborted):
        run_browser(rows(), ScriptUi(["toggle"]))


def test_declined_confirmation_aborts():
    with pytest.raises(Aborted):
        run_browser(rows(), ScriptUi(["toggle", "d", "n"]))


def test_group_select_first_to_last():
    keys = ["g"] + ["j"] * 4 + ["g", "confirm"]
    assert run_browser(rows(), ScriptUi(keys)) == [f"f{i}" for i in range(5)]


def test_group_select_backwards():
    keys = ["j", "j", "j", "g", "k", "k", "g", "confirm"]
    assert run_browser(rows(), ScriptUi(keys)) == ["f1", "f2", "f3"]


def test_marker_rendered():
    b = FileBrowser(rows(3))
    b.handle(" ")
    lines = b.render()
    assert lines[0].startswith(MARK)
    assert not lines[1].startswith(MARK)


def test_cursor_clamped_and_arrows():
    b = FileBrowser(rows(2))
    b.handle("up")
    assert b.cursor == 0
    for _ in range(5):
        b.handle("\x1b[B")
    assert b.cursor == 1


def test_toggle_twice_unmarks():
    b = FileBrowser(rows(3))
    b.handle("space")
    b.handle("k")
    b.handle("space")
    assert b.selected() == []


def test_delete_with_nothing_marked_aborts():
    with pytest.raises(Aborted):
        FileBrowser(rows(2)).handle("d")


def test_expand_keys():
    assert list(expand_keys(["j", "confirm"])) == ["j", "d", "y"]
