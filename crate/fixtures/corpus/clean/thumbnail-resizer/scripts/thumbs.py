import sys
from pathlib import Path

from PIL import Image


def thumbnail(path):
    img = Image.open(path)
    img.thumbnail((320, 180))
    p = Path(path)
    img.save(p.with_name(p.stem + '-thumb' + p.suffix))
