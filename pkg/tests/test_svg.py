import xml.etree.ElementTree as ET

import numpy as np

from tagdiff.svg import Plot


def test_render_is_valid_svg(tmp_path):
    x = np.array([1.0, 10.0, 100.0])
    p = Plot("title & <stuff>", "N", "TV", logx=True)
    p.add("data", x, 1 / x, yerr=0.1 / x).add("points", x, 2 / x, scatter=True)
    p.save(tmp_path / "p.svg")
    root = ET.parse(tmp_path / "p.svg").getroot()
    tags = [el.tag.split("}")[1] for el in root.iter()]
    assert tags.count("polyline") == 1 and tags.count("circle") == 3


def test_render_degenerate_data():
    svg = Plot().add("flat", [1.0], [2.0]).render()
    ET.fromstring(svg)
    ET.fromstring(Plot().render())
