# Generated by Django 5.2.5 on 2026-10-17 12:00

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('label', models.CharField(db_index=True, help_text='Experiment group, e.g. comparison_b0.2_m100', max_length=120)),
                ('method', models.CharField(db_index=True, max_length=20)),
                ('created_at', models.DateTimeField(db_index=True, default=django.utils.timezone.now)),
                ('reps', models.PositiveIntegerField(default=1)),
                ('seed', models.BigIntegerField()),
                ('params', models.JSONField(blank=True, default=dict, help_text='Resolved simulation parameters')),
                ('output_path', models.CharField(blank=True, default='', max_length=500)),
                ('final_total_energy', models.FloatField(blank=True, null=True)),
                ('final_variation_distance', models.FloatField(blank=True, null=True)),
                ('final_balanced_count', models.FloatField(blank=True, null=True)),
                ('prediction_accuracy', models.FloatField(blank=True, help_text='Share of next locations predicted right', null=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['label', 'method'], name='run_label_method_idx')],
            },
        ),
        migrations.CreateModel(
            name='IterationMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('iteration', models.PositiveIntegerField()),
                ('total_energy', models.FloatField()),
                ('variation_distance', models.FloatField()),
                ('meetings', models.FloatField()),
                ('balanced_count', models.FloatField()),
                ('exec_time_us', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='iterations', to='experiments.experimentrun')),
            ],
            options={
                'ordering': ['run', 'iteration'],
                'constraints': [models.UniqueConstraint(fields=('run', 'iteration'), name='unique_iteration_per_run')],
            },
        ),
    ]
