"""View-hierarchy parsing, corpus loading and app-wise splits."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import DataError, ParseError, SchemaError, SplitError

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
SPLIT_FILES = {"train": "train_apps.txt", "validation": "val_apps.txt", "test": "test_apps.txt"}
SCREENSHOT_SUFFIXES = (".jpg", ".png", ".jpeg")
MAX_SUMMARIES = 5


@dataclass(frozen=True)
class Bounds:
    left: int
    top: int
    right: int
    bottom: int

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def as_list(self) -> list[int]:
        return [self.left, self.top, self.right, self.bottom]

    def clip(self, width: int, height: int) -> "Bounds":
        left = min(max(self.left, 0), width)
        top = min(max(self.top, 0), height)
        return Bounds(left, top, max(left, min(self.right, width)), max(top, min(self.bottom, height)))


@dataclass(frozen=True)
class UiElement:
    node_id: int
    class_name: str
    clickable: bool
    visible_to_user: bool
    bounds: Bounds
    text: str | None
    children: tuple[int, ...]
    pre_order: int
    post_order: int
    depth: int
    parent: int | None = None

    @property
    def degenerate(self) -> bool:
        return self.bounds.is_degenerate


class UiTree:
    """A parsed view hierarchy.

    Elements are stored in pre-order, so ``node_id == pre_order`` and the
    root is element 0.
    """

    def __init__(self, elements: Sequence[UiElement], package: str | None = None):
        if not elements:
            raise SchemaError("view hierarchy has no elements")
        self.elements = tuple(elements)
        self.package = package

    @property
    def root(self) -> UiElement:
        return self.elements[0]

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[UiElement]:
        return iter(self.elements)

    def __getitem__(self, node_id: int) -> UiElement:
        return self.elements[node_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, UiTree) and self.elements == other.elements

    def __repr__(self) -> str:
        return f"UiTree({len(self)} elements, root={self.root.class_name!r})"

    def children(self, node_id: int) -> list[UiElement]:
        return [self.elements[c] for c in self.elements[node_id].children]


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _as_bool(value, default: bool) -> bool:
    if value is None:
        return default
    if isinstance(value, str):
        return value.strip().lower() in ("true", "1", "yes")
    return bool(value)


def _find_root(doc) -> dict:
    if isinstance(doc, dict):
        activity = doc.get("activity")
        if isinstance(activity, dict) and "root" in activity:
            root = activity["root"]
            if not isinstance(root, dict):
                raise SchemaError("root node is not an object", path="activity.root")
            return root
        if "root" in doc and isinstance(doc["root"], dict):
            return doc["root"]
        if "bounds" in doc or "class" in doc or "children" in doc:
            return doc
    raise SchemaError("no root node object found", path="$")


def _package_of(doc, root: dict) -> str | None:
    if isinstance(doc, dict):
        activity_name = doc.get("activity_name")
        if isinstance(activity_name, str) and activity_name:
            return activity_name.split("/")[0]
    package = root.get("package")
    return package if isinstance(package, str) and package else None


def _read_bounds(node: dict, path: str) -> Bounds:
    raw = node.get("bounds")
    if raw is None:
        raise SchemaError("missing bounds", path=path)
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"bounds must be 4 numbers, got {raw!r}", path=path)
    try:
        left, top, right, bottom = (int(round(float(v))) for v in raw)
    except (TypeError, ValueError):
        raise SchemaError(f"non-numeric bounds {raw!r}", path=path) from None
    # inverted boxes occur in crawled hierarchies; collapse them to zero area
    return Bounds(left, top, max(left, right), max(top, bottom))


def _read_text(node: dict) -> str | None:
    text = node.get("text")
    if text is None:
        return None
    text = str(text)
    return text if text.strip() else None


def parse_view_hierarchy(json_text: str | bytes) -> UiTree:
    """Parse a RICO-style view hierarchy document into a :class:`UiTree`.

    Accepts either a full RICO file (``{"activity": {"root": ...}}``) or a
    bare node object. Missing optional fields default to: text absent,
    clickable false, visible true.

    Raises:
        ParseError: the JSON is malformed; carries the byte offset.
        SchemaError: a node lacks ``class`` or ``bounds``; names the node path.
    """
    if isinstance(json_text, bytes):
        json_text = json_text.decode("utf-8")
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", offset=_byte_offset(json_text, exc.pos)) from None
    root = _find_root(doc)

    # iterative DFS; RICO trees can be deep enough to make recursion fragile
    records: list[dict] = []
    stack: list[tuple[dict, str, int, int | None]] = [(root, "root", 0, None)]
    while stack:
        node, path, depth, parent = stack.pop()
        if "class" not in node or node["class"] is None:
            raise SchemaError("missing class", path=path)
        node_id = len(records)
        records.append(
            dict(
                node_id=node_id,
                class_name=str(node["class"]),
                clickable=_as_bool(node.get("clickable"), False),
                visible_to_user=_as_bool(node.get("visible-to-user", node.get("visible_to_user")), True),
                bounds=_read_bounds(node, path),
                text=_read_text(node),
                children=[],
                pre_order=node_id,
                depth=depth,
                parent=parent,
            )
        )
        if parent is not None:
            records[parent]["children"].append(node_id)
        kids = node.get("children") or []
        if not isinstance(kids, list):
            raise SchemaError("children must be a list", path=path)
        for i in reversed(range(len(kids))):
            child = kids[i]
            if child is None:
                continue
            if not isinstance(child, dict):
                raise SchemaError("child is not an object", path=f"{path}.children[{i}]")
            stack.append((child, f"{path}.children[{i}]", depth + 1, node_id))

    _assign_post_order(records)
    elements = [UiElement(**{**r, "children": tuple(r["children"])}) for r in records]
    return UiTree(elements, package=_package_of(doc, root))


def _assign_post_order(records: list[dict]) -> None:
    counter = 0
    stack = [(0, False)]
    while stack:
        node_id, expanded = stack.pop()
        if expanded:
            records[node_id]["post_order"] = counter
            counter += 1
            continue
        stack.append((node_id, True))
        for child in reversed(records[node_id]["children"]):
            stack.append((child, False))


def tree_to_dict(tree: UiTree, node_id: int = 0) -> dict:
    """Inverse of :func:`parse_view_hierarchy` for the fields we keep."""
    el = tree[node_id]
    node = {
        "class": el.class_name,
        "bounds": el.bounds.as_list(),
        "clickable": el.clickable,
        "visible-to-user": el.visible_to_user,
    }
    if el.text is not None:
        node["text"] = el.text
    if el.children:
        node["children"] = [tree_to_dict(tree, c) for c in el.children]
    return node


def serialize_view_hierarchy(tree: UiTree) -> str:
    doc = {"activity": {"root": tree_to_dict(tree)}}
    if tree.package:
        doc["activity_name"] = tree.package
    return json.dumps(doc)


# --------------------------------------------------------------------------
# Screens and corpora
# --------------------------------------------------------------------------


@dataclass
class Screen:
    screen_id: str
    app_id: str
    root: UiTree
    summaries: list[str]
    screenshot_path: Path | None = None
    screenshot_size: tuple[int, int] | None = None
    sfa_boxes: list[Bounds] = field(default_factory=list)
    app_description: str | None = None
    screenshot_array: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.summaries = [s.strip() for s in self.summaries if s and s.strip()]
        if not self.summaries:
            raise DataError(f"screen {self.screen_id} has no non-empty summaries")
        if self.screenshot_array is not None and self.screenshot_size is None:
            h, w = self.screenshot_array.shape[:2]
            self.screenshot_size = (w, h)

    @property
    def device_size(self) -> tuple[int, int]:
        """Width/height of the coordinate frame the element bounds live in."""
        b = self.root.root.bounds
        return (b.right, b.bottom)

    def load_screenshot(self) -> np.ndarray:
        """RGB uint8 array of shape (H, W, 3)."""
        if self.screenshot_array is not None:
            return self.screenshot_array
        if self.screenshot_path is None:
            raise DataError(f"screen {self.screen_id} has no screenshot")
        with Image.open(self.screenshot_path) as img:
            return np.asarray(img.convert("RGB"))


@dataclass(frozen=True)
class SkipRecord:
    screen_id: str
    reason: str


@dataclass(frozen=True)
class SplitCounts:
    apps: int
    screens: int
    summaries: int


@dataclass(frozen=True)
class Corpus:
    screens: Mapping[str, Screen]
    splits: Mapping[str, frozenset] = field(default_factory=dict)
    skipped: tuple[SkipRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "screens", MappingProxyType(dict(self.screens)))
        object.__setattr__(self, "splits", MappingProxyType(dict(self.splits)))

    def __reduce__(self):
        # mapping proxies do not pickle
        return (Corpus, (dict(self.screens), dict(self.splits), self.skipped))

    def __len__(self) -> int:
        return len(self.screens)

    @property
    def num_summaries(self) -> int:
        return sum(len(s.summaries) for s in self.screens.values())

    @property
    def app_ids(self) -> set[str]:
        return {s.app_id for s in self.screens.values()}

    def split_of(self, screen_id: str) -> str:
        app = self.screens[screen_id].app_id
        for name, apps in self.splits.items():
            if app in apps:
                return name
        raise SplitError(f"screen {screen_id} (app {app}) is not assigned to a split")

    def screen_ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return sorted(self.screens)
        apps = self.splits.get(split)
        if apps is None:
            raise SplitError(f"no split named {split!r}; splits not assigned?")
        return sorted(sid for sid, s in self.screens.items() if s.app_id in apps)

    def view(self, split: str) -> "CorpusView":
        return CorpusView(split, {sid: self.screens[sid] for sid in self.screen_ids(split)})

    def split_counts(self) -> dict[str, SplitCounts]:
        out = {}
        for name in self.splits:
            ids = self.screen_ids(name)
            out[name] = SplitCounts(
                apps=len({self.screens[i].app_id for i in ids}),
                screens=len(ids),
                summaries=sum(len(self.screens[i].summaries) for i in ids),
            )
        return out


class CorpusView:
    """Read-only access to the screens of a single split.

    Training code receives views rather than the corpus so that it cannot
    reach summaries from other splits.
    """

    def __init__(self, split: str, screens: Mapping[str, Screen]):
        self.split = split
        self._screens = MappingProxyType(dict(screens))

    def __len__(self) -> int:
        return len(self._screens)

    def __iter__(self) -> Iterator[Screen]:
        return iter(self._screens[k] for k in sorted(self._screens))

    def __contains__(self, screen_id) -> bool:
        return screen_id in self._screens

    def __getitem__(self, screen_id: str) -> Screen:
        return self._screens[screen_id]

    @property
    def screen_ids(self) -> list[str]:
        return sorted(self._screens)


def _read_csv(path: Path, required: Sequence[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _find_screenshot(root_dir: Path, screen_id: str) -> Path | None:
    for suffix in SCREENSHOT_SUFFIXES:
        p = root_dir / "screenshots" / f"{screen_id}{suffix}"
        if p.exists():
            return p
    return None


def load_corpus(
    root_dir,
    summaries_file,
    app_details_file=None,
    sfa_file=None,
) -> Corpus:
    """Load every screen referenced by the summaries CSV.

    Screens whose hierarchy or screenshot is missing (or whose hierarchy does
    not parse) are skipped and listed in ``Corpus.skipped``.
    """
    root_dir = Path(root_dir)
    summaries: dict[str, list[str]] = {}
    for row in _read_csv(Path(summaries_file), ("screenId", "summary")):
        sid = row["screenId"].strip()
        text = (row["summary"] or "").strip()
        if sid and text:
            summaries.setdefault(sid, []).append(text)

    descriptions: dict[str, str] = {}
    if app_details_file is not None and Path(app_details_file).exists():
        for row in _read_csv(Path(app_details_file), ("appId", "description")):
            desc = (row["description"] or "").strip()
            if desc:
                descriptions[row["appId"].strip()] = desc

    sfa: dict[str, list[tuple[int, Bounds]]] = {}
    if sfa_file is not None and Path(sfa_file).exists():
        for row in _read_csv(Path(sfa_file), ("screenId", "labelerIndex", "left", "top", "right", "bottom")):
            box = Bounds(*(int(round(float(row[k]))) for k in ("left", "top", "right", "bottom")))
            sfa.setdefault(row["screenId"].strip(), []).append((int(row["labelerIndex"]), box))

    screens: dict[str, Screen] = {}
    skipped: list[SkipRecord] = []
    for sid, texts in summaries.items():
        hierarchy = root_dir / "hierarchies" / f"{sid}.json"
        shot = _find_screenshot(root_dir, sid)
        if not hierarchy.exists():
            skipped.append(SkipRecord(sid, "missing view hierarchy"))
            continue
        if shot is None:
            skipped.append(SkipRecord(sid, "missing screenshot"))
            continue
        try:
            tree = parse_view_hierarchy(hierarchy.read_bytes())
        except (ParseError, SchemaError) as exc:
            skipped.append(SkipRecord(sid, f"bad view hierarchy: {exc}"))
            continue
        with Image.open(shot) as img:
            size = img.size
        if len(texts) > MAX_SUMMARIES:
            logger.warning("screen %s has %d summaries; keeping the first %d", sid, len(texts), MAX_SUMMARIES)
            texts = texts[:MAX_SUMMARIES]
        boxes = [b for _, b in sorted(sfa.get(sid, []), key=lambda t: t[0])][:MAX_SUMMARIES]
        clipped = [b.clip(*size) for b in boxes]
        if clipped != boxes:
            logger.warning("screen %s: SFA box outside screenshot clipped", sid)
        app_id = tree.package or "unknown"
        screens[sid] = Screen(
            screen_id=sid,
            app_id=app_id,
            root=tree,
            summaries=texts,
            screenshot_path=shot,
            screenshot_size=size,
            sfa_boxes=clipped,
            app_description=descriptions.get(app_id),
        )

    for rec in skipped:
        logger.warning("skipped screen %s: %s", rec.screen_id, rec.reason)
    if skipped:
        logger.warning("skipped %d screen(s) in total", len(skipped))
    return Corpus(screens=screens, skipped=tuple(skipped))


def read_split_lists(directory) -> dict[str, list[str]]:
    directory = Path(directory)
    out = {}
    for split, name in SPLIT_FILES.items():
        path = directory / name
        if path.exists():
            out[split] = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        else:
            out[split] = []
    return out


def assign_splits(corpus: Corpus, split_lists: Mapping[str, Iterable[str]]) -> Corpus:
    """Return a copy of ``corpus`` with app-wise splits attached.

    Raises:
        SplitError: an app appears in two lists, or a corpus app is in none.
    """
    owner: dict[str, str] = {}
    splits: dict[str, frozenset] = {}
    for name in SPLITS:
        apps = list(split_lists.get(name, ()))
        for app in apps:
            if app in owner and owner[app] != name:
                raise SplitError(f"app {app} appears in both {owner[app]} and {name} splits")
            owner[app] = name
        splits[name] = frozenset(apps)
    unknown = set(split_lists) - set(SPLITS)
    if unknown:
        raise SplitError(f"unknown split name(s): {sorted(unknown)}")
    uncovered = sorted(corpus.app_ids - owner.keys())
    if uncovered:
        shown = ", ".join(uncovered[:10]) + (" ..." if len(uncovered) > 10 else "")
        raise SplitError(f"{len(uncovered)} app(s) not covered by any split: {shown}")
    return dataclasses.replace(corpus, splits=splits)


# --------------------------------------------------------------------------
# Stop phrases
# --------------------------------------------------------------------------


def load_stop_phrases(path=None) -> list[str]:
    if path is None:
        text = resources.files("uisum").joinpath("data/stop_phrases.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def _phrase_pattern(phrase: str) -> re.Pattern:
    words = [re.escape(w) for w in phrase.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(words) + r"(?!\w)", re.IGNORECASE)


def strip_stop_phrases(summary: str, stop_phrases: Sequence[str], *, return_flag: bool = False):
    """Remove whole-phrase, case-insensitive stop phrases and collapse spaces.

    If removal would leave nothing, the (whitespace-collapsed) original is
    returned and the flag is set.
    """
    patterns = [_phrase_pattern(p) for p in stop_phrases if p.strip()]
    original = " ".join(summary.split())
    text = original
    while True:
        before = text
        for pat in patterns:
            text = " ".join(pat.sub(" ", text).split())
        if text == before:
            break
    emptied = not text
    result = original if emptied else text
    return (result, emptied) if return_flag else result
