import numpy as np
import pytest

from otex import checkpoint, cli
from otex import numerics as nx
from otex.data import build_vocab, read_corpus
from otex.layers import CHAR_WORD, WORD_ONLY, Model
from otex.training import TrainConfig, train

WINE = "The wine list is also really nice ."
CONLL = """The\tO
wine\tI
list\tI
is\tO
also\tO
really\tO
nice\tO
.\tO

Moules\tI
were\tO
excellent\tO
.\tO

The\tO
ravioli\tI
was\tO
salty\tO
.\tO

Great\tO
service\tI
and\tO
decor\tB
.\tO
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "train.conll").write_text(CONLL, encoding="utf-8")
    return d


@pytest.fixture(scope="module")
def overfit_model(workdir):
    """A char+word model trained until it reproduces its tiny training set exactly."""
    corpus = read_corpus(workdir / "train.conll")
    wv, cv = build_vocab(corpus, "word", 100), build_vocab(corpus, "char", 100)
    model = Model.create(CHAR_WORD, wv, cv, hidden=16, char_dim=8, word_dim=16, seed=1)
    encs = [model.encode(s) for s in corpus]
    report = train(model, encs, TrainConfig(max_epochs=300, patience=None, target_f1=1.0, dropout_rate=0.0,
                                            learning_rate=1e-2), val_encs=encs)
    assert report.best_f1 == 1.0
    path = workdir / "overfit.otem"
    checkpoint.save_model(model, path)
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_missing_file_names_path(capsys, tmp_path):
    missing = tmp_path / "nope.xml"
    code, _, err = run(capsys, "train", "--train", missing)
    assert code == 2 and str(missing) in err


def test_train_writes_model_and_report(capsys, workdir, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code, stdout, _ = run(capsys, "train", "--train", workdir / "train.conll", "--variant", "word-only",
                              "--hidden", 6, "--word-dim", 4, "--max-epochs", 2, "--out-dir", out)
        assert code == 0 and "best validation F1" in stdout
        outputs.append(((out / "model.otem").read_bytes(), (out / "train_report.tsv").read_text()))
    assert outputs[0] == outputs[1]
    report = outputs[0][1].splitlines()
    assert len(report[0].split("\t")) == 3
    assert report[-2].startswith("best_epoch\t") and report[-1].startswith("stop_reason\t")
    model = checkpoint.loads(outputs[0][0])
    assert model.variant == WORD_ONLY and model.config.hidden == 6


def test_output_dir_from_environment(capsys, workdir, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path / "env"))
    code, _, _ = run(capsys, "train", "--train", workdir / "train.conll", "--variant", "word-only",
                     "--hidden", 4, "--word-dim", 3, "--max-epochs", 1)
    assert code == 0 and (tmp_path / "env" / "model.otem").exists()


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nvariant = word-only\nhidden = 8\nlr = 0.01\n", encoding="utf-8")
    args = cli.build_parser().parse_args(["train", "--config", str(cfg), "--hidden", "4"])
    opts = cli.resolve(args, {**cli.MODEL_KEYS, **cli.TRAIN_KEYS})
    assert opts["variant"] == "word-only" and opts["hidden"] == 4 and opts["lr"] == 0.01
    assert opts["batch_size"] == 5


def test_unknown_config_key_is_an_error(capsys, workdir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("hiden = 8\n", encoding="utf-8")
    code, _, err = run(capsys, "train", "--config", cfg, "--train", workdir / "train.conll")
    assert code == 2 and "hiden" in err


def test_grid_dry_run_counts(capsys):
    code, out, _ = run(capsys, "grid", "--dry-run", "--variant", "char+word")
    assert code == 0 and out.strip().splitlines()[-1] == "27 char+word configurations"
    code, out, _ = run(capsys, "grid", "--dry-run", "--variant", "word-only")
    assert code == 0 and out.strip().splitlines()[-1] == "9 word-only configurations"
    assert len(cli.grid_configs(CHAR_WORD, [10000, 20000, 50000], [60, 100, 200], [20, 50, 100])) == 27


def test_grid_table(capsys, workdir, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"grid{k}.tsv"
        code, _, _ = run(capsys, "grid", "--train", workdir / "train.conll", "--variant", "word-only",
                         "--vocab-sizes", "5,50", "--hidden-sizes", "4", "--word-dim", 3, "--folds", 2,
                         "--max-epochs", 2, "--output", out)
        assert code == 0
        outputs.append(out.read_text())
    assert outputs[0] == outputs[1]
    lines = outputs[0].splitlines()
    assert lines[0] == "|V|\tr\td_chr\tmean_f1"
    assert len(lines) == 3
    scores = [float(ln.split("\t")[3]) for ln in lines[1:]]
    assert scores == sorted(scores, reverse=True)


def test_cv_folds_partition():
    folds = cli.cv_folds(11, 5, seed=0)
    assert sorted(np.concatenate(folds).tolist()) == list(range(11))
    assert [len(f) for f in folds] == [3, 2, 2, 2, 2]
    assert all(np.array_equal(a, b) for a, b in zip(folds, cli.cv_folds(11, 5, seed=0)))


def test_tag_wine_list(capsys, overfit_model, tmp_path):
    text = tmp_path / "in.txt"
    text.write_text(WINE + "\nMoules were excellent .\n", encoding="utf-8")
    conll = tmp_path / "out.conll"
    code, out, _ = run(capsys, "tag", "--model", overfit_model, "--input", text, "--conll-output", conll)
    assert code == 0
    assert out.splitlines() == ["s0\t1\t2\twine list", "s1\t0\t0\tMoules"]
    assert conll.read_text().splitlines()[:3] == ["The\tO", "wine\tI", "list\tI"]


def test_tag_empty_input(capsys, overfit_model, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("", encoding="utf-8")
    code, out, _ = run(capsys, "tag", "--model", overfit_model, "--input", empty)
    assert code == 0 and out == ""


def test_tag_variant_mismatch(capsys, overfit_model, tmp_path):
    text = tmp_path / "in.txt"
    text.write_text(WINE + "\n", encoding="utf-8")
    code, _, err = run(capsys, "tag", "--model", overfit_model, "--input", text, "--variant", "word-only")
    assert code == 2 and "char+word" in err


def test_eval_oracle_and_format(capsys, overfit_model, workdir, tmp_path):
    out = tmp_path / "metrics.tsv"
    code, stdout, _ = run(capsys, "eval", "--model", overfit_model, "--gold", workdir / "train.conll",
                          "--subsets", "all,multiword_2,multiword_3", "--output", out)
    assert code == 0 and out.read_text() == stdout
    lines = [ln for ln in stdout.splitlines() if not ln.startswith("#")]
    assert "all\tf1\t1.0000" in lines
    assert "multiword_2\tf1\t1.0000" in lines
    assert "multiword_3\tf1\t0.0000" in lines
    assert len(lines) == 9


def test_eval_compare_delta(capsys, overfit_model, workdir, tmp_path):
    corpus = read_corpus(workdir / "train.conll")
    wv, cv = build_vocab(corpus, "word", 100), build_vocab(corpus, "char", 100)
    untrained = tmp_path / "untrained.otem"
    checkpoint.save_model(Model.create(WORD_ONLY, wv, cv, hidden=4, word_dim=3), untrained)
    code, stdout, _ = run(capsys, "eval", "--model", untrained, "--gold", workdir / "train.conll",
                          "--compare", overfit_model, "--subsets", "all")
    assert code == 0
    rows = [ln.split("\t") for ln in stdout.splitlines() if not ln.startswith("#")]
    assert rows[0] == ["subset", "metric", "model_a", "model_b", "delta"]
    for _, _, a, b, delta in rows[1:]:
        assert float(delta) == pytest.approx(float(b) - float(a), abs=1e-4)


def test_analyze_neighbors(capsys, tmp_path):
    emb = tmp_path / "emb.txt"
    emb.write_text("atmosphere 1 0\natomosphere 0.9 0.1\nwine 0 1\n", encoding="utf-8")
    code, out, _ = run(capsys, "analyze", "neighbors", "--embeddings", emb, "--word", "atmosphere", "--k", 1)
    assert code == 0 and out.split("\t")[0] == "atomosphere"
    code, _, err = run(capsys, "analyze", "neighbors", "--embeddings", emb, "--word", "atmosfere")
    assert code == 2 and "atmosphere" in err


def test_analyze_suffix_export_and_pca(capsys, tmp_path):
    from otex.synthetic import suffix_corpus

    corpus = suffix_corpus(30, seed=0)
    wv, cv = build_vocab(corpus, "word", 500), build_vocab(corpus, "char", 100)
    model_path = tmp_path / "m.otem"
    checkpoint.save_model(Model.create(CHAR_WORD, wv, cv, hidden=4, char_dim=3, word_dim=3), model_path)
    export = tmp_path / "export.tsv"
    code, _, _ = run(capsys, "analyze", "suffix-export", "--model", model_path, "--output", export)
    assert code == 0
    rows = export.read_text().splitlines()
    assert rows[0] == "token\tlabel\td0\td1\td2"
    assert 2 <= len(rows) - 1 <= 2000
    assert all(r.split("\t")[1] in ("-ing", "-ly", "-able", "-ish", "-less", "-ize") for r in rows[1:])
    proj = tmp_path / "pca.tsv"
    code, _, _ = run(capsys, "analyze", "pca", "--in", export, "--output", proj)
    assert code == 0
    lines = proj.read_text().splitlines()
    assert lines[0] == "token\tlabel\tx\ty"
    assert len(lines) == len(rows) and all(len(ln.split("\t")) == 4 for ln in lines)


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    lines = out.splitlines()
    names = {ln.split("\t")[1] for ln in lines if ln.startswith("char+word\t")}
    models = cli.gradcheck_models()
    assert set(models[CHAR_WORD][0].params) <= names
    for variant in (WORD_ONLY, CHAR_WORD):
        (line,) = [ln for ln in lines if ln.startswith(f"{variant}\tmax\t")]
        assert float(line.split("\t")[2]) < 1e-4


def test_gradcheck_catches_sign_flip(capsys, monkeypatch):
    rule = nx.BACKWARD_RULES["sigmoid"]
    monkeypatch.setitem(nx.BACKWARD_RULES, "sigmoid", lambda node, g: tuple(-x for x in rule(node, g)))
    code, _, err = run(capsys, "gradcheck", "--max-entries", 4)
    assert code == 1
    failing = [ln.split()[3].rstrip(":") for ln in err.splitlines() if ln.startswith("FAIL")]
    assert failing and all(name in cli.gradcheck_models()[CHAR_WORD][0].params for name in failing)
