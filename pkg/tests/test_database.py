"""학습 실행 기록 SQLite 저장소"""

import pytest

from database import TrainingDatabase


@pytest.fixture
def db(tmp_path):
    database = TrainingDatabase(str(tmp_path / "runs.db"), verbose=False)
    yield database
    database.close()


def _insert(db: TrainingDatabase) -> int:
    return db.insert_run("configs/tiny_cnn.txt", "input height=8 width=8 channels=2\n", "train.csv",
                         None, "out", 0, 187, 12, None, {"cg_tol": 0.1, "seed": 0})


def test_insert_and_finish(db):
    run_id = _insert(db)
    assert run_id == 1
    db.insert_iteration(run_id, {"iter": 1, "f": 0.9, "train_acc": 0.5, "test_acc": float("nan"),
                                 "lambda": 1.0, "cg_iters": 4, "alpha": 1.0, "seconds": 0.1})
    db.finish_run(run_id, "completed", 0.9, float("nan"))

    run = db.get_runs()[0]
    assert run["status"] == "completed"
    assert run["iterations"] == 1
    assert run["final_test_acc"] is None
    assert run["finished_at"] is not None

    rows = db.get_iterations(run_id)
    assert rows[0]["test_acc"] is None
    assert rows[0]["lambda"] == 1.0


def test_resume_overwrites_iteration(db):
    run_id = _insert(db)
    row = {"iter": 2, "f": 0.8, "train_acc": 0.5, "test_acc": 0.4,
           "lambda": 1.0, "cg_iters": 4, "alpha": 1.0, "seconds": 0.1}
    db.insert_iteration(run_id, row)
    db.insert_iteration(run_id, dict(row, f=0.7))
    rows = db.get_iterations(run_id)
    assert len(rows) == 1
    assert rows[0]["f"] == 0.7


def test_stats(db):
    first = _insert(db)
    second = _insert(db)
    db.finish_run(first, "completed", 0.5, 0.91)
    db.finish_run(second, "numerical_error")
    stats = db.get_stats()
    assert stats["total_runs"] == 2
    assert stats["by_status"] == {"completed": 1, "numerical_error": 1}
    assert stats["best_test_acc"] == 0.91
    assert [run["run_id"] for run in db.get_runs()] == [second, first]
