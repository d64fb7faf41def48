from manim import *
from manim_voiceover import VoiceoverScene


class GeometricProof(VoiceoverScene):
    def construct(self):
        triangle = Polygon(ORIGIN, RIGHT * 3, UP * 4)
        with self.voiceover(text="Start with a right triangle.") as tracker:
            self.play(Create(triangle), run_time=tracker.duration)
