"""Text-mode multi-select file browser shown inside the trusted session.

Keys (tokens read from the UI channel):

    k / up          move up
    j / down        move down
    space / toggle  toggle the selection marker and move down
    g / group       first press remembers the row, second press selects
                    every row between it and the cursor
    d / enter       ask for confirmation of the deletion
    y / n           answer the confirmation
    q / abort       leave without deleting

``confirm`` is shorthand for ``d`` followed by ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import Aborted

MARK = "»"

_ALIASES = {
    "up": "k", "\x1b[A": "k",
    "down": "j", "\x1b[B": "j",
    "toggle": "space", " ": "space",
    "group": "g",
    "enter": "d", "\r": "d", "\n": "d", "delete": "d",
    "yes": "y", "no": "n",
    "abort": "q", "quit": "q", "\x1b": "q",
}


@dataclass
class BrowserRow:
    name: str
    size: int
    modified: int
    hidden: bool = False


@dataclass
class FileBrowser:
    rows: list[BrowserRow]
    cursor: int = 0
    marked: set[int] = field(default_factory=set)
    anchor: int | None = None
    confirming: bool = False

    def render(self) -> list[str]:
        lines = []
        for i, row in enumerate(self.rows):
            mark = MARK if i in self.marked else " "
            here = ">" if i == self.cursor else " "
            kind = " (version)" if row.hidden else ""
            lines.append(f"{mark}{here} {row.name}\t{row.size}\t{row.modified}{kind}")
        if self.anchor is not None:
            lines.append(f"group from: {self.rows[self.anchor].name}")
        if self.confirming:
            lines.append(f"delete {len(self.marked)} file(s)? [y/n]")
        return lines

    def selected(self) -> list[str]:
        return [self.rows[i].name for i in sorted(self.marked)]

    def handle(self, key: str) -> bool:
        """Apply one key.  Returns True once the deletion is confirmed."""
        key = _ALIASES.get(key, key)
        if self.confirming:
            if key == "y":
                return True
            raise Aborted("deletion not confirmed")
        if key == "q":
            raise Aborted("browser closed")
        if not self.rows:
            if key == "d":
                raise Aborted("nothing to delete")
            return False
        if key == "k":
            self.cursor = max(0, self.cursor - 1)
        elif key == "j":
            self.cursor = min(len(self.rows) - 1, self.cursor + 1)
        elif key == "space":
            self.marked ^= {self.cursor}
            self.cursor = min(len(self.rows) - 1, self.cursor + 1)
        elif key == "g":
            if self.anchor is None:
                self.anchor = self.cursor
            else:
                lo, hi = sorted((self.anchor, self.cursor))
                self.marked |= set(range(lo, hi + 1))
                self.anchor = None
        elif key == "d":
            if not self.marked:
                raise Aborted("nothing selected")
            self.confirming = True
        return False


def expand_keys(tokens):
    """Split scripted tokens, turning ``confirm`` into ``d``, ``y``."""
    for tok in tokens:
        if tok == "confirm":
            yield "d"
            yield "y"
        else:
            yield tok


def run_browser(rows: list[BrowserRow], ui) -> list[str]:
    """Drive a browser from ``ui`` until the user confirms or aborts."""
    browser = FileBrowser(rows)
    pending: list[str] = []
    for line in browser.render():
        ui.write(line)
    while True:
        if not pending:
            key = ui.read_key()
            if key is None:
                raise Aborted("input ended")
            pending.extend(expand_keys([key]))
        if browser.handle(pending.pop(0)):
            return browser.selected()
        for line in browser.render():
            ui.write(line)
