import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None or report.when != "call" and not report.failed:
        return
    title = (item.function.__doc__ or item.name).strip().splitlines()[0]
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    prev = _CRITERIA.get(number, (title, "PASS"))[1]
    if prev == "FAIL" or status == "FAIL":
        status = "FAIL"
    _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}")


@pytest.fixture(scope="session")
def garden_reference():
    """Garden fixture at 2048 spp: Mu and BSDF shading from one joint pass."""
    from madshade.pipeline import Renderer, packaged
    from madshade.projection import estimate
    from madshade.scene import load_scene

    scene = load_scene(packaged("scenes/garden.ini"))
    r = Renderer(scene)
    mu, rgb = estimate(r.gbuffer.hit(), scene, spp=2048, seed=5, want_mu=True, want_shade=True)
    return dict(scene=scene, mu=mu, rgb=rgb)
