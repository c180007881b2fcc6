"""
Choreography Evaluation - Streamlit dashboard

Runs the dance metric suite (PFC, BAS, diversity, MSAS, CSAS) over a directory of
generated or reference motion files and shows the scores side by side.
"""
import streamlit as st
import sys
from pathlib import Path

# Add src directory to path for imports
src_path = Path(__file__).parent / "src"
sys.path.insert(0, str(src_path))

from src.cli import load_classifiers
from src.config import MetricConfig
from src.evaluation_engine import EvaluationEngine
from src.ui_controller import UIController


def initialize_components(inputs):
    """Build the evaluation engine for the current inputs."""
    style_classifier = None
    if inputs.get("classifier"):
        _, style_classifier = load_classifiers(Path(inputs["classifier"]))
    cfg = MetricConfig(sigma=float(inputs["sigma"]), alpha=float(inputs["alpha"]))
    return EvaluationEngine(cfg=cfg, style_classifier=style_classifier)


def main():
    """Main application entry point."""
    st.set_page_config(
        page_title="Choreography Evaluation",
        page_icon="💃",
        layout="wide",
        initial_sidebar_state="collapsed"
    )

    ui_controller = UIController()

    try:
        inputs = ui_controller.render_evaluation_inputs()
    except Exception as e:
        st.error(f"Failed to render evaluation inputs: {str(e)}")
        st.stop()

    if st.button("🔍 Evaluate", type="primary", use_container_width=True):
        try:
            if not ui_controller.validate_evaluation_inputs(inputs):
                ui_controller.display_error_message("Invalid inputs. Check the directories and metric selection.")
                st.stop()

            engine = initialize_components(inputs)
            with st.spinner("Computing metrics..."):
                result = engine.evaluate(
                    inputs["directory"],
                    ui_controller.selected_metrics(inputs),
                    inputs["refs"] or None,
                )

            ui_controller.display_evaluation_results(result)
            ui_controller.display_success_message("Evaluation completed successfully!")

        except Exception as e:
            ui_controller.display_error_message(f"Evaluation failed: {str(e)}")

            # Show debug information in development
            if st.secrets.get("debug_mode", False):
                st.exception(e)

    st.markdown("---")
    st.markdown("""
    ### About the metrics

    - **PFC**: physical foot contact; penalises root acceleration while both feet move
    - **BAS**: beat alignment between motion-speed minima and music beats
    - **Dist_k / Dist_g**: spread of the set in kinetic and geometric feature space
    - **MSAS**: does a dance classifier recognise the music's genre in the motion?
    - **CSAS**: how close each dance is to the centroid of its requested choreography style
    """)


if __name__ == "__main__":
    main()
