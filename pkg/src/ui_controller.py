"""
Streamlit UI controller for the dance evaluation dashboard.
"""
import streamlit as st
from pathlib import Path
from typing import Any, Dict, List

from .models import EvaluationResult, MetricName, MetricReport
from .interfaces import UIControllerInterface


class UIController(UIControllerInterface):
    """Streamlit UI controller for managing user interactions."""

    def __init__(self):
        """Initialize the UI controller."""
        self.metric_options = [m.value for m in MetricName]
        self.metric_descriptions = {
            "pfc": {
                "label": "PFC",
                "help": "Physical foot contact: root acceleration while both feet slide. Lower is better.",
            },
            "bas": {
                "label": "BAS",
                "help": "Beat alignment: Gaussian proximity of motion beats to music beats. Higher is better.",
            },
            "dist": {
                "label": "Dist_k / Dist_g",
                "help": "Diversity: mean pairwise distance in kinetic and geometric feature space.",
            },
            "msas": {
                "label": "MSAS",
                "help": "Music-style alignment: true-genre probability when it is in the classifier's top 3.",
            },
            "csas": {
                "label": "CSAS",
                "help": "Choreography-style alignment: exp(-alpha * distance) to the style centroid.",
            },
        }

    def render_evaluation_inputs(self) -> Dict[str, Any]:
        """Render evaluation input controls and return values."""
        st.header("💃 Choreography Evaluation")
        st.subheader("Score generated dance against its music and style")

        st.markdown("""
        Point the dashboard at a directory of motion files (`.chor`) with their label
        and beat sidecars, choose the metrics, and compare the scores.
        """)

        st.markdown("---")
        col1, col2 = st.columns(2)

        inputs: Dict[str, Any] = {}
        with col1:
            inputs["directory"] = st.text_input(
                "Motion directory", value="generated",
                help="Directory holding .chor files and their .json / .beats.json sidecars",
                key="directory",
            )
            inputs["refs"] = st.text_input(
                "Reference corpus (CSAS)", value="",
                help="Directory of labelled reference motions; leave empty to skip CSAS",
                key="refs",
            )
            inputs["classifier"] = st.text_input(
                "Classifier checkpoint (MSAS)", value="",
                help="Checkpoint written by train-classifier; leave empty to skip MSAS",
                key="classifier",
            )

        with col2:
            inputs["metrics"] = st.multiselect(
                "Metrics",
                self.metric_options,
                default=["pfc", "bas", "dist"],
                format_func=lambda m: self.metric_descriptions[m]["label"],
                key="metrics",
            )
            inputs["sigma"] = st.number_input(
                "BAS sigma (s)", min_value=0.01, max_value=1.0, value=0.1, step=0.01, key="sigma",
            )
            inputs["alpha"] = st.number_input(
                "CSAS alpha", min_value=0.01, max_value=10.0, value=1.0, step=0.1, key="alpha",
            )

        return inputs

    def display_evaluation_results(self, results: EvaluationResult) -> None:
        """Display evaluation results in the UI."""
        st.markdown("---")
        st.subheader("📋 Metric Results")
        self.render_metric_table(results.reports)

        if results.per_item_bas:
            st.markdown("---")
            st.subheader("🥁 Beat Alignment per Sequence")
            self.render_bas_chart(results.per_item_bas)

        if results.warnings:
            st.markdown("---")
            st.subheader("⚠️ Warnings")
            for warning in results.warnings:
                st.warning(warning)

    def render_metric_table(self, reports: Dict[str, MetricReport]) -> None:
        """Render the metric summary table."""
        import pandas as pd

        rows = []
        for key, report in reports.items():
            desc = self.metric_descriptions.get(report.metric, {"label": key})
            label = desc["label"]
            if report.metric == "dist":
                label = "Dist_k" if report.params.get("block") == "kinetic" else "Dist_g"
            rows.append({"Metric": label, "Value": round(report.value, 4), "Items": report.n})

        if not rows:
            st.info("No metric could be computed for this selection.")
            return
        df = pd.DataFrame(rows)
        st.table(df.set_index("Metric"))

    def render_bas_chart(self, per_item: Dict[str, float]) -> None:
        import pandas as pd

        df = pd.DataFrame({"sequence": list(per_item), "bas": list(per_item.values())})
        st.bar_chart(df.set_index("sequence"))

    def validate_evaluation_inputs(self, inputs: Dict[str, Any]) -> bool:
        """Validate that evaluation inputs are usable."""
        if not inputs.get("metrics"):
            return False
        if any(m not in self.metric_options for m in inputs["metrics"]):
            return False
        directory = inputs.get("directory", "")
        if not directory or not Path(directory).is_dir():
            return False
        if "csas" in inputs["metrics"] and inputs.get("refs") and not Path(inputs["refs"]).is_dir():
            return False
        return True

    def selected_metrics(self, inputs: Dict[str, Any]) -> List[MetricName]:
        return [MetricName(m) for m in inputs["metrics"]]

    def display_error_message(self, message: str) -> None:
        """Display an error message to the user."""
        st.error(f"❌ {message}")

    def display_info_message(self, message: str) -> None:
        """Display an info message to the user."""
        st.info(f"ℹ️ {message}")

    def display_success_message(self, message: str) -> None:
        """Display a success message to the user."""
        st.success(f"✅ {message}")
