"""
Database Module

Manages SQLite database for training runs and their Newton iterations.
"""

import json
import sqlite3
from typing import Dict, List, Optional


class TrainingDatabase:
    """학습 실행(runs)과 반복별 기록(iterations) 저장소"""

    def __init__(self, db_path: str = "newton_runs.db", verbose: bool = True):
        self.db_path = db_path
        self.conn = sqlite3.connect(db_path)
        self.conn.row_factory = sqlite3.Row
        self.cursor = self.conn.cursor()
        self.create_tables(verbose)

    def create_tables(self, verbose: bool = True):
        """Create database tables"""

        # Runs table - 실행 설정과 최종 결과
        self.cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                config_path TEXT NOT NULL,
                config_text TEXT,
                train_data TEXT,
                test_data TEXT,
                out_dir TEXT,
                seed INTEGER,
                num_params INTEGER,
                train_size INTEGER,
                test_size INTEGER,
                solver_json TEXT,
                status TEXT DEFAULT 'running',
                final_f REAL,
                final_test_acc REAL,
                iterations INTEGER DEFAULT 0,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                finished_at TIMESTAMP
            )
        """)

        # Iterations table - 반복 로그 CSV와 같은 열
        self.cursor.execute("""
            CREATE TABLE IF NOT EXISTS iterations (
                run_id INTEGER NOT NULL,
                iter INTEGER NOT NULL,
                f REAL,
                train_acc REAL,
                test_acc REAL,
                lambda REAL,
                cg_iters INTEGER,
                alpha REAL,
                seconds REAL,
                FOREIGN KEY (run_id) REFERENCES runs(run_id) ON DELETE CASCADE,
                UNIQUE(run_id, iter)
            )
        """)

        self.cursor.execute("""
            CREATE INDEX IF NOT EXISTS idx_iterations_run ON iterations(run_id)
        """)

        self.conn.commit()
        if verbose:
            print(f"✓ Database initialized: {self.db_path}")

    def insert_run(self, config_path: str, config_text: str, train_data: str, test_data: Optional[str],
                   out_dir: str, seed: int, num_params: int, train_size: int,
                   test_size: Optional[int], solver: Dict) -> Optional[int]:
        """Insert run record, returns run_id"""
        try:
            self.cursor.execute("""
                INSERT INTO runs (config_path, config_text, train_data, test_data, out_dir, seed,
                                  num_params, train_size, test_size, solver_json)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (config_path, config_text, train_data, test_data, out_dir, seed,
                  num_params, train_size, test_size, json.dumps(solver, sort_keys=True)))
            self.conn.commit()
            return self.cursor.lastrowid

        except sqlite3.Error as e:
            print(f"  ✗ Error inserting run: {e}")
            self.conn.rollback()
            return None

    def insert_iteration(self, run_id: int, row: Dict) -> bool:
        """
        반복 한 줄 기록. resume으로 같은 iter가 다시 오면 덮어쓴다.
        Returns: True (성공), False (실패)
        """
        try:
            self.cursor.execute("""
                INSERT INTO iterations (run_id, iter, f, train_acc, test_acc, lambda, cg_iters, alpha, seconds)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                ON CONFLICT(run_id, iter) DO UPDATE SET
                    f = excluded.f,
                    train_acc = excluded.train_acc,
                    test_acc = excluded.test_acc,
                    lambda = excluded.lambda,
                    cg_iters = excluded.cg_iters,
                    alpha = excluded.alpha,
                    seconds = excluded.seconds
            """, (run_id, int(row["iter"]), float(row["f"]), _nullable(row.get("train_acc")),
                  _nullable(row.get("test_acc")), float(row["lambda"]), int(row["cg_iters"]),
                  float(row["alpha"]), float(row["seconds"])))
            self.cursor.execute("UPDATE runs SET iterations = ? WHERE run_id = ?",
                                (int(row["iter"]), run_id))
            self.conn.commit()
            return True
        except sqlite3.Error as e:
            print(f"  ✗ Error inserting iteration: {e}")
            print(f"     Row: {row}")
            self.conn.rollback()
            return False

    def finish_run(self, run_id: int, status: str, final_f: Optional[float] = None,
                   final_test_acc: Optional[float] = None):
        self.cursor.execute("""
            UPDATE runs
            SET status = ?, final_f = ?, final_test_acc = ?, finished_at = CURRENT_TIMESTAMP
            WHERE run_id = ?
        """, (status, _nullable(final_f), _nullable(final_test_acc), run_id))
        self.conn.commit()

    def get_runs(self) -> List[Dict]:
        self.cursor.execute("SELECT * FROM runs ORDER BY run_id DESC")
        return [dict(row) for row in self.cursor.fetchall()]

    def get_iterations(self, run_id: int) -> List[Dict]:
        self.cursor.execute("SELECT * FROM iterations WHERE run_id = ? ORDER BY iter", (run_id,))
        return [dict(row) for row in self.cursor.fetchall()]

    def get_stats(self) -> Dict:
        """Get database statistics"""
        stats = {}

        self.cursor.execute("SELECT COUNT(*) as count FROM runs")
        stats['total_runs'] = self.cursor.fetchone()['count']

        self.cursor.execute("SELECT COUNT(*) as count FROM iterations")
        stats['total_iterations'] = self.cursor.fetchone()['count']

        self.cursor.execute("""
            SELECT status, COUNT(*) as count
            FROM runs
            GROUP BY status
            ORDER BY count DESC
        """)
        stats['by_status'] = dict(self.cursor.fetchall())

        self.cursor.execute("SELECT MAX(final_test_acc) as best FROM runs")
        stats['best_test_acc'] = self.cursor.fetchone()['best']

        return stats

    def close(self):
        """Close database connection"""
        self.conn.close()


def _nullable(value) -> Optional[float]:
    """NaN/None → NULL"""
    if value is None:
        return None
    value = float(value)
    return None if value != value else value
