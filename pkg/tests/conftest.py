def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[name])
    if not getattr(module, "BEIBEI", None):
        terminalreporter.write_line("SKIP  8 optional Beibei scale: MBCGCN_BEIBEI_DIR not set (not gating)")
