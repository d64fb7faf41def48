"""Storyboard planning for theorem videos."""

import json


def plan_scenes(theorem, max_scenes=4):
    """Split a theorem statement into scene purpose, description and layout."""
    clauses = [c.strip() for c in theorem.split(",") if c.strip()]
    scenes = []
    for index, clause in enumerate(clauses[:max_scenes]):
        scenes.append(
            {
                "purpose": f"Explain step {index + 1}: {clause}",
                "description": f"Animate the objects named in '{clause}'",
                "layout": {"anchor": "ORIGIN", "grid": "axes" if index == 0 else "none"},
            }
        )
    return scenes


def save_storyboard(scenes, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(scenes, handle, indent=2)
