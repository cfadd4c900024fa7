import numpy as np
import pytest

from cffont.glyphgen import default_alphabet, random_font_specs, render_glyph
from cffont.toymodel import Schedule, TrainingSet, init_decoder_bias, init_params, train_stage

SMALL = 24


def render_fonts(specs, size=SMALL, skeletons=None):
    skeletons = skeletons if skeletons is not None else default_alphabet()
    return np.stack([np.stack([render_glyph(s, k, size).flat() for k in skeletons]) for s in specs])


@pytest.fixture(scope="session")
def small_model():
    """A stage-1 model trained briefly on 8 synthetic fonts at 24x24.

    Returns (params, training set, source font index).
    """
    specs = random_font_specs(8, seed=11)
    skels = default_alphabet()
    images = render_fonts(specs)
    data = TrainingSet([s.font_id for s in specs], [k.char_id for k in skels], images, np.arange(16),
                       SMALL, SMALL)
    params = init_params(SMALL, SMALL, 16, 6, seed=0)
    init_decoder_bias(params, images)
    train_stage(params, data, Schedule(stage1_iters=400, batch_size=16, log_every=100), 1, source_font=0)
    return params, data, 0


# --- acceptance verdicts ----------------------------------------------------------

_VERDICTS: dict = {}


class Verdict:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.line = None

    def __call__(self, ok: bool, detail: str) -> None:
        self.line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}: {detail}"
        _VERDICTS[self.number] = self.line
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    v = Verdict(*marker.args)
    yield v
    if v.line is None:
        _VERDICTS[v.number] = f"criterion {v.number:2d} FAIL  {v.title}: raised before a verdict"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
