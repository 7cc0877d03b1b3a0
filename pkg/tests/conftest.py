import pytest


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line (visible under -v without -s), then assert."""

    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return emit
