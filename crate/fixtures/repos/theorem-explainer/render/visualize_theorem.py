"""Render a narrated Manim walkthrough of a theorem."""

import subprocess
from pathlib import Path

from manim import Axes, MathTex, Scene, Write
from manim_voiceover import VoiceoverScene

from planner.storyboard import plan_scenes

MAX_ATTEMPTS = 3


def visualize_theorem(theorem, out_dir="media"):
    """Visualize a theorem as an animated proof video with synchronized narration."""
    # 1. Plan the scenes: coordinate layout, mathematical objects and narration script.
    scenes = plan_scenes(theorem)
    # 2. Generate Manim code for each scene and sync narration with each transition.
    code = build_scene_code(theorem, scenes)
    source = Path(out_dir) / "theorem_scene.py"
    source.parent.mkdir(parents=True, exist_ok=True)
    source.write_text(code, encoding="utf-8")
    # 3. Render, and on failure feed the traceback back into the fix loop.
    for attempt in range(MAX_ATTEMPTS):
        result = subprocess.run(["manim", "-qm", str(source), "TheoremScene"], capture_output=True, text=True)
        if result.returncode == 0:
            break
        if attempt == MAX_ATTEMPTS - 1:
            raise RuntimeError(result.stderr)
        code = repair_scene_code(code, result.stderr)
        source.write_text(code, encoding="utf-8")
    # 4. Check that every storyboard scene appears in the rendered code.
    missing = [s["purpose"] for s in scenes if s["purpose"] not in code]
    if missing:
        raise ValueError(f"storyboard scenes missing from code: {missing}")
    return source


def build_scene_code(theorem, scenes):
    lines = ["from manim import *", "", "class TheoremScene(Scene):", "    def construct(self):"]
    for scene in scenes:
        lines.append(f"        # {scene['purpose']}")
        lines.append(f"        self.play(Write(MathTex(r'{theorem}')))")
    return "\n".join(lines) + "\n"


def repair_scene_code(code, traceback_text):
    if "NameError" in traceback_text:
        return "from manim import *\n" + code
    return code
