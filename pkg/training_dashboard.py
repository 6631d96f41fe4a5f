"""
학습 기록 대시보드
Streamlit 기반 newton_runs.db 시각화 애플리케이션

사용법:
    streamlit run training_dashboard.py
    NEWTON_CNN_DB=runs/newton_runs.db streamlit run training_dashboard.py
"""

import json
import os
import sqlite3

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

# 환경 변수 로드
load_dotenv()

DB_PATH = os.environ.get("NEWTON_CNN_DB", "newton_runs.db")

# 페이지 설정
st.set_page_config(
    page_title="Newton CNN 학습 대시보드",
    page_icon="📊",
    layout="wide"
)

# CSS 스타일
st.markdown("""
<style>
    .main-header {
        font-size: 2.5rem;
        font-weight: 700;
        color: #1E3A5F;
        text-align: center;
        padding: 1rem 0;
        border-bottom: 3px solid #4A90D9;
        margin-bottom: 2rem;
    }
</style>
""", unsafe_allow_html=True)


@st.cache_resource
def get_connection():
    """데이터베이스 연결"""
    return sqlite3.connect(DB_PATH, check_same_thread=False)


@st.cache_data(ttl=10)
def get_runs() -> pd.DataFrame:
    """실행 목록 (최근 것이 위)"""
    query = """
        SELECT run_id, config_path, status, iterations, final_f, final_test_acc,
               train_size, test_size, num_params, seed, out_dir, solver_json, created_at, finished_at
        FROM runs
        ORDER BY run_id DESC
    """
    return pd.read_sql(query, get_connection())


@st.cache_data(ttl=10)
def get_iterations(run_id: int) -> pd.DataFrame:
    query = """
        SELECT iter, f, train_acc, test_acc, lambda, cg_iters, alpha, seconds
        FROM iterations
        WHERE run_id = ?
        ORDER BY iter
    """
    return pd.read_sql(query, get_connection(), params=(run_id,))


def run_label(row) -> str:
    acc = f"{row['final_test_acc']:.4f}" if pd.notna(row['final_test_acc']) else "-"
    return f"#{row['run_id']} | {os.path.basename(row['config_path'])} | {row['status']} | test {acc}"


def render_run(run: pd.Series):
    iterations = get_iterations(int(run['run_id']))

    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("🔁 Newton 반복", f"{int(run['iterations'] or 0):,}회")
    with col2:
        final_f = f"{run['final_f']:.6g}" if pd.notna(run['final_f']) else "-"
        st.metric("📉 최종 f", final_f)
    with col3:
        best = iterations['test_acc'].max() if not iterations.empty else None
        st.metric("🎯 최고 테스트 정확도", f"{best:.4f}" if best is not None and pd.notna(best) else "-")
    with col4:
        st.metric("🧮 파라미터 수", f"{int(run['num_params']):,}")

    if iterations.empty:
        st.warning("⚠️ 기록된 반복이 없습니다.")
        return

    st.divider()
    indexed = iterations.set_index('iter')
    col1, col2 = st.columns(2)
    with col1:
        st.markdown("#### 📉 목적함수 f")
        st.line_chart(indexed[['f']])
        st.markdown("#### 🎛️ λ (Levenberg-Marquardt)")
        st.line_chart(indexed[['lambda']])
    with col2:
        st.markdown("#### 🎯 정확도")
        st.line_chart(indexed[['train_acc', 'test_acc']])
        st.markdown("#### 🔁 CG 반복 수")
        st.bar_chart(indexed[['cg_iters']])

    st.markdown("### 📋 반복 기록")
    st.dataframe(iterations, use_container_width=True, hide_index=True, height=300)
    st.download_button(
        label="📥 CSV 다운로드",
        data=iterations.to_csv(index=False),
        file_name=f"run_{int(run['run_id'])}_iterations.csv",
        mime="text/csv"
    )

    with st.expander("⚙️ Solver 설정"):
        st.json(json.loads(run['solver_json'] or "{}"))


def main():
    # 헤더
    st.markdown('<div class="main-header">📊 Newton CNN 학습 대시보드</div>', unsafe_allow_html=True)

    if not os.path.exists(DB_PATH):
        st.info(f"👆 `{DB_PATH}` 가 없습니다. 먼저 `python newton_trainer.py train ...` 을 실행하세요.")
        return

    runs = get_runs()
    if runs.empty:
        st.warning("⚠️ 기록된 실행이 없습니다.")
        return

    st.markdown("### 🗂️ 실행 목록")
    st.dataframe(runs.drop(columns=['solver_json']), use_container_width=True, hide_index=True, height=250)

    labels = {run_label(row): idx for idx, row in runs.iterrows()}
    selected = st.selectbox("상세 정보를 볼 실행을 선택하세요:", options=list(labels))
    st.divider()
    render_run(runs.loc[labels[selected]])


if __name__ == "__main__":
    main()
