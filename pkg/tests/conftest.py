import pytest


@pytest.fixture
def criterion_report(request):
    """Print a line to the real terminal even while output is captured."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def _report(line: str):
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print(line, flush=True)
        else:
            print(line, flush=True)

    return _report
