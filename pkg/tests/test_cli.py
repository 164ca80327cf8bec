import pytest

from maskcount import cli, pipeline
from maskcount.errors import ShapeError


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.mark.parametrize(
    "error, code",
    [
        (ShapeError("apply_mask", (4, 4), (2, 2)), 2),
        (ValueError("At least one exemplar is required"), 2),
        (PermissionError(13, "Permission denied", "reports/eval"), 3),
        (FileNotFoundError(2, "No such file or directory", "data/scenes/x/image.ppm"), 3),
    ],
)
def test_input_errors_exit_with_a_message(monkeypatch, caplog, error, code):
    def fail(cfg, ws):
        raise error

    monkeypatch.setattr(pipeline, "cmd_gen", fail)
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["gen"])
    assert exit_info.value.code == code
    assert any(record.levelname == "ERROR" and str(error) in record.getMessage() for record in caplog.records)


def test_count_without_artifacts_exits_3():
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["count", "--scene", "nowhere"])
    assert exit_info.value.code == 3


def test_unknown_config_key_exits_2(workdir):
    (workdir / "bad.cfg").write_text("[model]\ndepth = 3\n")
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["gen", "--config", "bad.cfg"])
    assert exit_info.value.code == 2
