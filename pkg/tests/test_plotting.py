from tsda import tensor as T
from tsda.data import gen_two_moons_shift
from tsda.metrics import average_precision, pr_curve
from tsda.plotting import plot_loss_trace, plot_pr_curve, plot_selection
from tsda.trainer import TrainConfig, train
from tsda.twostream import build_pair, parse_pattern

PNG = b"\x89PNG\r\n\x1a\n"


def test_loss_trace_renders_and_is_byte_stable(tmp_path):
    src, tgt = gen_two_moons_shift(32, seed=0, n_labeled_target=4)
    pair = build_pair([T.dense(2, 4), T.relu(), T.dense(4, 2)], parse_pattern("+-"), 0)
    _, report = train(pair, src, tgt, TrainConfig(epochs_pretrain=2, epochs_joint=2))
    a = plot_loss_trace(report, tmp_path / "a.png")
    b = plot_loss_trace(report, tmp_path / "b.png")
    assert a.read_bytes().startswith(PNG)
    assert a.read_bytes() == b.read_bytes()


def test_selection_and_pr_figures(tmp_path):
    p = plot_selection(["---", "+--"], [0.2, 0.1], [0.8, None], tmp_path / "sel.png")
    assert p.read_bytes().startswith(PNG)
    q = plot_selection(["---", "+--"], [0.2, 0.1], None, tmp_path / "sel2.png")
    assert q.stat().st_size > 0
    c = pr_curve([0.9, 0.4, 0.3], [1, 0, 1])
    assert plot_pr_curve(c, average_precision(c), tmp_path / "pr.png").read_bytes().startswith(PNG)
