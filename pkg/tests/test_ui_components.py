"""
Unit tests for UI components of the choreography evaluation dashboard.
"""
import pytest

from src.models import EvaluationResult, MetricName, MetricReport
from src.ui_controller import UIController


class TestUIComponents:
    """Test UI component functionality."""

    def setup_method(self):
        """Set up test fixtures."""
        self.ui_controller = UIController()

    def test_all_metrics_described(self):
        """Every metric the engine computes has a label and help text."""
        for metric in MetricName:
            assert metric.value in self.ui_controller.metric_options
            desc = self.ui_controller.metric_descriptions[metric.value]
            assert len(desc["label"]) > 0
            assert len(desc["help"]) > 0

    def test_valid_inputs(self, tmp_path):
        inputs = {"directory": str(tmp_path), "metrics": ["pfc", "bas"], "refs": ""}
        assert self.ui_controller.validate_evaluation_inputs(inputs)
        assert self.ui_controller.selected_metrics(inputs) == [MetricName.PFC, MetricName.BAS]

    @pytest.mark.parametrize("metrics", [[], ["tempo"]])
    def test_invalid_metric_selection(self, tmp_path, metrics):
        inputs = {"directory": str(tmp_path), "metrics": metrics}
        assert not self.ui_controller.validate_evaluation_inputs(inputs)

    def test_missing_directory(self, tmp_path):
        inputs = {"directory": str(tmp_path / "missing"), "metrics": ["pfc"]}
        assert not self.ui_controller.validate_evaluation_inputs(inputs)
        assert not self.ui_controller.validate_evaluation_inputs({"directory": "", "metrics": ["pfc"]})

    def test_csas_reference_must_exist(self, tmp_path):
        inputs = {"directory": str(tmp_path), "metrics": ["csas"], "refs": str(tmp_path / "missing")}
        assert not self.ui_controller.validate_evaluation_inputs(inputs)
        inputs["refs"] = str(tmp_path)
        assert self.ui_controller.validate_evaluation_inputs(inputs)

    def test_result_structure_for_display(self):
        """Results carry everything the table and chart render."""
        result = EvaluationResult(
            reports={
                "bas": MetricReport("bas", 0.93, 4, {"sigma": 0.1}),
                "dist_k": MetricReport("dist", 5.2, 4, {"block": "kinetic"}),
            },
            per_item_bas={"a": 0.9, "b": 0.96},
            warnings=[],
        )
        for report in result.reports.values():
            assert report.metric in self.ui_controller.metric_descriptions
            assert report.n == 4
        assert result.reports["dist_k"].params["block"] == "kinetic"
        assert max(result.per_item_bas.values()) <= 1.0
