import pytest

from receptosim.plots import plot
from receptosim.scenario import write_outputs


def test_plot_file_names_are_deterministic(tmp_path, fig4_output):
    write_outputs(fig4_output, tmp_path)
    paths = plot(tmp_path, ["fill", "transmittance"])
    assert [p.name for p in paths] == ["plot_fill.png", "plot_transmittance.png"]
    first = paths[0].read_bytes()
    plot(tmp_path, "fill")
    assert paths[0].read_bytes() == first


def test_plot_errors(tmp_path):
    with pytest.raises(ValueError):
        plot(tmp_path, "spectrum")
    with pytest.raises(FileNotFoundError):
        plot(tmp_path / "missing", "fill")
