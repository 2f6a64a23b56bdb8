# apps/experiments/models.py
from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """One emitted aggregated trace (one method of one experiment)."""
    label = models.CharField(max_length=120, db_index=True, help_text="Experiment group, e.g. comparison_b0.2_m100")
    method = models.CharField(max_length=20, db_index=True)
    created_at = models.DateTimeField(default=timezone.now, db_index=True)
    reps = models.PositiveIntegerField(default=1)
    seed = models.BigIntegerField()
    params = models.JSONField(default=dict, blank=True, help_text="Resolved simulation parameters")
    output_path = models.CharField(max_length=500, blank=True, default="")

    final_total_energy = models.FloatField(null=True, blank=True)
    final_variation_distance = models.FloatField(null=True, blank=True)
    final_balanced_count = models.FloatField(null=True, blank=True)
    prediction_accuracy = models.FloatField(null=True, blank=True, help_text="Share of next locations predicted right")

    class Meta:
        ordering = ["-created_at"]
        indexes = [
            models.Index(fields=["label", "method"], name="run_label_method_idx"),
        ]

    def __str__(self):
        return f"{self.label} • {self.method} ({self.reps} reps)"


class IterationMetric(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="iterations")
    iteration = models.PositiveIntegerField()
    total_energy = models.FloatField()
    variation_distance = models.FloatField()
    meetings = models.FloatField()
    balanced_count = models.FloatField()
    exec_time_us = models.FloatField()

    class Meta:
        ordering = ["run", "iteration"]
        constraints = [
            models.UniqueConstraint(fields=["run", "iteration"], name="unique_iteration_per_run"),
        ]

    def __str__(self):
        return f"{self.run} • t={self.iteration}"
