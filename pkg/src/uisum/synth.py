"""Deterministic synthetic corpus in the on-disk dataset layout.

Used as the bundled fixture: RICO-style hierarchies, rendered grayscale-ish
screenshots, five summaries per screen, SFA boxes, app descriptions, split
lists and a small GloVe-format vector file covering the fixture's words.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .vocab import tokenize

DEVICE_W, DEVICE_H = 1440, 2560
SHOT_W, SHOT_H = 360, 640

CATEGORIES = ["news", "shopping", "fitness", "music", "travel", "banking", "weather", "recipe", "social", "education"]

APP_BLURBS = {
    "news": "read breaking headlines and daily stories",
    "shopping": "buy clothes and deals from online stores",
    "fitness": "track workouts steps and calories",
    "music": "stream songs albums and playlists",
    "travel": "book hotels flights and trips",
    "banking": "check balance and transfer money",
    "weather": "see forecast temperature and rain radar",
    "recipe": "cook meals with easy recipes",
    "social": "chat with friends and share photos",
    "education": "learn languages with lessons and quizzes",
}

# (class, text) rows for each screen type; "{cat}" is filled per app
SCREEN_TYPES = {
    "login": [
        ("android.widget.TextView", "Welcome back"),
        ("android.widget.EditText", "Email"),
        ("android.widget.EditText", "Password"),
        ("android.widget.Button", "Log in"),
        ("android.widget.TextView", "Forgot password"),
    ],
    "signup": [
        ("android.widget.TextView", "Create account"),
        ("android.widget.EditText", "Name"),
        ("android.widget.EditText", "Email"),
        ("android.widget.EditText", "Password"),
        ("android.widget.Button", "Sign up"),
    ],
    "settings": [
        ("android.widget.TextView", "Settings"),
        ("android.widget.Switch", "Notifications"),
        ("android.widget.Switch", "Dark mode"),
        ("android.widget.TextView", "Privacy"),
        ("android.widget.TextView", "About"),
    ],
    "search": [
        ("android.widget.EditText", "Search {cat}"),
        ("android.widget.TextView", "Recent searches"),
        ("android.widget.TextView", "Top {cat} results"),
        ("android.widget.ImageView", None),
    ],
    "feed": [
        ("android.widget.TextView", "{cat} feed"),
        ("android.widget.ImageView", None),
        ("android.widget.TextView", "Latest {cat} story"),
        ("android.widget.ImageView", None),
        ("android.widget.TextView", "Trending now"),
    ],
    "profile": [
        ("android.widget.ImageView", None),
        ("android.widget.TextView", "My profile"),
        ("android.widget.TextView", "Followers"),
        ("android.widget.Button", "Edit profile"),
    ],
    "menu": [
        ("android.widget.TextView", "Home"),
        ("android.widget.TextView", "Favorites"),
        ("android.widget.TextView", "History"),
        ("android.widget.TextView", "Help"),
        ("android.widget.TextView", "Logout"),
    ],
    "dialog": [
        ("android.widget.TextView", "Rate this app"),
        ("android.widget.Button", "Not now"),
        ("android.widget.Button", "Rate"),
    ],
}

SUMMARY_TEMPLATES = {
    "login": ["login page of {cat} app", "sign in screen with email and password",
              "page displaying login option in the app", "log in page for a {cat} application",
              "screen showing login form for user"],
    "signup": ["sign up page of {cat} app", "create account screen with name and email",
               "registration page in the app", "page to register a new {cat} account",
               "screen showing sign up form"],
    "settings": ["settings page of {cat} app", "screen showing settings options",
                 "page displaying notification and privacy settings", "settings menu in this app",
                 "settings screen with dark mode option"],
    "search": ["search page of {cat} app", "screen showing search bar and results",
               "page to search for {cat} items", "search results page in the app",
               "screen displaying recent searches"],
    "feed": ["{cat} feed with latest stories", "home page showing {cat} feed",
             "page displaying trending {cat} posts", "screen showing list of {cat} stories in the app",
             "feed page of {cat} app"],
    "profile": ["user profile page of {cat} app", "profile screen with followers count",
                "page showing user profile details", "screen to edit profile in the app",
                "profile page displaying user picture"],
    "menu": ["menu page of {cat} app", "navigation menu with home and favorites",
             "screen showing side menu options", "menu options displayed in the app",
             "page displaying menu with logout option"],
    "dialog": ["pop up asking to rate the app", "rating dialog of {cat} app",
               "pop up showing rate option", "dialog box to rate this app",
               "screen displaying rate app pop up"],
}

CLASS_SHADE = {
    "android.widget.TextView": (235, 235, 235),
    "android.widget.EditText": (255, 255, 255),
    "android.widget.Button": (40, 90, 200),
    "android.widget.Switch": (120, 200, 120),
    "android.widget.ImageView": (90, 90, 90),
}


@dataclass
class FixtureInfo:
    root: Path
    screens: int
    summaries: int
    apps: int
    split_apps: dict
    split_screens: dict
    split_summaries: dict
    glove: Path


def _node(cls, bounds, text=None, clickable=False, visible=True, children=None):
    node = {"class": cls, "bounds": list(bounds), "clickable": clickable, "visible-to-user": visible}
    if text is not None:
        node["text"] = text
    node["children"] = children or []
    return node


def _render(rows, bg, path):
    img = Image.new("RGB", (SHOT_W, SHOT_H), bg)
    draw = ImageDraw.Draw(img)
    sx, sy = SHOT_W / DEVICE_W, SHOT_H / DEVICE_H
    for cls, bounds, text in rows:
        l, t, r, b = bounds
        box = (l * sx, t * sy, max(l * sx, r * sx - 1), max(t * sy, b * sy - 1))
        draw.rectangle(box, fill=CLASS_SHADE.get(cls, (200, 200, 200)), outline=(30, 30, 30))
        if text:
            draw.text((box[0] + 4, box[1] + 4), text, fill=(0, 0, 0))
    img.save(path)


def make_fixture(root, n_screens: int = 50, n_apps: int = 10, seed: int = 0, summaries_per_screen: int = 5,
                 glove_dim: int = 300) -> FixtureInfo:
    """Write a synthetic corpus under ``root`` and return its expected counts."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / "hierarchies").mkdir(parents=True, exist_ok=True)
    (root / "screenshots").mkdir(parents=True, exist_ok=True)

    apps = [f"com.fixture.{CATEGORIES[i % len(CATEGORIES)]}{i}" for i in range(n_apps)]
    app_cat = {a: CATEGORIES[i % len(CATEGORIES)] for i, a in enumerate(apps)}
    types = sorted(SCREEN_TYPES)

    summary_rows, sfa_rows, words = [], [], set()
    per_app_screens: dict[str, list[str]] = {a: [] for a in apps}
    per_screen_summaries: dict[str, int] = {}
    for k in range(n_screens):
        app = apps[k % n_apps]
        cat = app_cat[app]
        kind = types[(k // n_apps + k) % len(types)]
        sid = f"{k:05d}"
        per_app_screens[app].append(sid)

        rows, children = [], []
        top = 160 + int(rng.integers(0, 80))
        for j, (cls, text) in enumerate(SCREEN_TYPES[kind]):
            text = text.format(cat=cat) if text else None
            height = int(rng.integers(140, 260))
            left = int(rng.integers(40, 120))
            right = DEVICE_W - int(rng.integers(40, 120))
            bounds = (left, top, right, min(top + height, DEVICE_H - 10))
            top = bounds[3] + int(rng.integers(20, 60))
            clickable = cls in ("android.widget.Button", "android.widget.Switch", "android.widget.EditText")
            children.append(_node(cls, bounds, text, clickable))
            rows.append((cls, bounds, text))
            words.update(tokenize(text))
        if k % 7 == 3:
            children.append(_node("android.view.View", (0, 0, 0, 0)))
        if k % 5 == 1:
            children.append(_node("android.widget.TextView", (0, 2400, DEVICE_W, 2560), "hidden banner", visible=False))
        toolbar = _node("android.widget.LinearLayout", (0, 0, DEVICE_W, 150),
                        children=[_node("android.widget.ImageButton", (20, 20, 130, 130), clickable=True),
                                  _node("android.widget.TextView", (160, 30, 900, 120), cat.title())])
        words.update(tokenize(cat))
        content = _node("android.widget.LinearLayout", (0, 150, DEVICE_W, DEVICE_H), children=children)
        tree = _node("android.widget.FrameLayout", (0, 0, DEVICE_W, DEVICE_H), children=[toolbar, content])
        doc = {"activity_name": f"{app}/.{kind.title()}Activity", "activity": {"root": tree}}
        (root / "hierarchies" / f"{sid}.json").write_text(json.dumps(doc))
        shade = 200 + (apps.index(app) * 5) % 50
        _render([("android.widget.TextView", (160, 30, 900, 120), cat.title())] + rows, (shade, shade, shade),
                 root / "screenshots" / f"{sid}.png")

        templates = SUMMARY_TEMPLATES[kind]
        n_sum = summaries_per_screen if k % 11 != 10 else max(1, summaries_per_screen - 2)
        for j in range(n_sum):
            text = templates[(j + k) % len(templates)].format(cat=cat)
            summary_rows.append((sid, text))
            words.update(tokenize(text))
        per_screen_summaries[sid] = n_sum

        content_box = (10, 40, SHOT_W - 10, min(SHOT_H - 5, int(top * SHOT_H / DEVICE_H) + 10))
        for j in range(n_sum if k % 4 else 1):
            jit = rng.integers(-8, 9, size=4)
            box = [int(np.clip(content_box[i] + jit[i], 0, SHOT_W if i % 2 == 0 else SHOT_H)) for i in range(4)]
            box[2], box[3] = max(box[2], box[0]), max(box[3], box[1])
            sfa_rows.append((sid, j, *box))

    with open(root / "summaries.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["screenId", "summary"])
        w.writerows(summary_rows)
    with open(root / "sfa.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["screenId", "labelerIndex", "left", "top", "right", "bottom"])
        w.writerows(sfa_rows)
    with open(root / "app_details.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["appId", "description"])
        for i, app in enumerate(apps):
            if i % 4 != 3:  # some apps have no description
                blurb = f"A {app_cat[app]} app to {APP_BLURBS[app_cat[app]]}"
                w.writerow([app, blurb])
                words.update(tokenize(blurb))

    n_train = max(1, round(n_apps * 0.6))
    n_val = max(0, round(n_apps * 0.2))
    split_apps = {"train": apps[:n_train], "validation": apps[n_train:n_train + n_val], "test": apps[n_train + n_val:]}
    for split, fname in (("train", "train_apps.txt"), ("validation", "val_apps.txt"), ("test", "test_apps.txt")):
        (root / fname).write_text("".join(a + "\n" for a in split_apps[split]))

    glove = root / "glove.txt"
    vec_rng = np.random.default_rng(seed + 1)
    with open(glove, "w", encoding="utf-8") as fh:
        for word in sorted(words):
            vec = vec_rng.normal(0.0, 0.4, size=glove_dim)
            fh.write(word + " " + " ".join(f"{v:.5f}" for v in vec) + "\n")

    split_screens = {s: sum(len(per_app_screens[a]) for a in apps_) for s, apps_ in split_apps.items()}
    split_summaries = {
        s: sum(per_screen_summaries[sid] for a in apps_ for sid in per_app_screens[a]) for s, apps_ in split_apps.items()
    }
    return FixtureInfo(
        root=root,
        screens=n_screens,
        summaries=len(summary_rows),
        apps=n_apps,
        split_apps={s: len(a) for s, a in split_apps.items()},
        split_screens=split_screens,
        split_summaries=split_summaries,
        glove=glove,
    )
