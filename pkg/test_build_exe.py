"""
Tests für die PyInstaller-Optionen (ohne Build)
"""

import pytest

from build_exe import EXECUTABLE_NAME, build_options


def test_build_options_posix(tmp_path):
    options = build_options(tmp_path, platform='linux')
    assert options[0] == str(tmp_path / 'run_survey.py')
    assert f"--name={EXECUTABLE_NAME}" in options
    assert '--console' in options
    assert f"--add-data={tmp_path / 'fixtures' / 'mock_corpus.json'}:fixtures" in options
    assert '--hidden-import=live_providers' in options
    assert not any(o.startswith('--icon=') for o in options)


def test_build_options_windows_with_icon(tmp_path):
    (tmp_path / 'icon.ico').write_bytes(b'')
    options = build_options(tmp_path, platform='win32')
    assert f"--add-data={tmp_path / 'fixtures' / 'mock_corpus.json'};fixtures" in options
    assert options[-1] == f"--icon={tmp_path / 'icon.ico'}"


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
