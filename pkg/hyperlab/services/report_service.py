import logging
import math
from typing import Any, Dict, List

from jinja2 import Template

from hyperlab.experiments.models import ExperimentReport

MAX_TABLE_ROWS = 40


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.4g}"
    if isinstance(value, list):
        return "[" + ", ".join(_format(v) for v in value[:6]) + (", ..." if len(value) > 6 else "") + "]"
    if value is None:
        return "-"
    return str(value)


class ReportService:
    def __init__(self):
        self.markdown_template = self._load_markdown_template()
        self.text_template = self._load_text_template()

    def _load_markdown_template(self) -> Template:
        """Markdown report written next to report.json"""
        template_content = """# {{ name }} ({{ kind }})

Seed: `{{ seed }}`, thresholds version {{ thresholds_version }}.

## Acceptance checks

| # | check | result | detail |
|---|-------|--------|--------|
{% for check in checks -%}
| {{ loop.index }} | {{ check.name }} | {{ "PASS" if check.success else "FAIL" }} | {{ check.detail }} |
{% endfor %}
{% if errors %}
## Errors

{% for error in errors -%}
- {{ error }}
{% endfor %}
{% endif %}
{% for table in tables %}
## {{ table.title }}

| {{ table.columns|join(' | ') }} |
|{% for column in table.columns %}---|{% endfor %}
{% for row in table.rows -%}
| {{ row|join(' | ') }} |
{% endfor %}
{%- if table.truncated %}
_{{ table.truncated }} more rows in report.json_
{% endif %}
{% endfor %}
{% if fits %}
## Fits

{% for name, fit in fits -%}
- **{{ name }}**: {{ fit }}
{% endfor %}
{% endif %}
"""
        return Template(template_content)

    def _load_text_template(self) -> Template:
        """Plain text summary printed by the CLI"""
        template_content = """{{ name }} ({{ kind }}), seed {{ seed }}
{% for check in checks -%}
  [{{ "PASS" if check.success else "FAIL" }}] {{ check.name }}{% if check.error %}: {{ check.error }}{% endif %}
{% endfor -%}
{% if errors %}{{ errors|length }} step(s) failed, see report.md
{% endif -%}
{{ passed }}/{{ checks|length }} checks passed
"""
        return Template(template_content)

    @staticmethod
    def _tables(report: ExperimentReport) -> List[Dict[str, Any]]:
        tables = []
        for section in sorted(report.sections):
            rows = report.sections[section]
            if not rows:
                continue
            columns = list(rows[0])
            for row in rows[1:]:
                columns += [key for key in row if key not in columns]
            shown = rows[:MAX_TABLE_ROWS]
            tables.append({
                "title": section.replace("_", " "),
                "columns": columns,
                "rows": [[_format(row.get(column)) for column in columns] for row in shown],
                "truncated": len(rows) - len(shown),
            })
        return tables

    @staticmethod
    def _check_rows(report: ExperimentReport) -> List[Dict[str, Any]]:
        rows = []
        for check in report.checks:
            if check.error:
                detail = check.error
            else:
                scalars = {k: v for k, v in (check.data or {}).items() if not isinstance(v, (dict, list))}
                detail = ", ".join(f"{k}={_format(v)}" for k, v in sorted(scalars.items()))
            rows.append({"name": check.name, "success": check.success, "error": check.error, "detail": detail})
        return rows

    def _variables(self, report: ExperimentReport) -> Dict[str, Any]:
        return {
            "name": report.name,
            "kind": report.kind,
            "seed": report.seed,
            "thresholds_version": report.thresholds_version,
            "checks": self._check_rows(report),
            "passed": sum(check.success for check in report.checks),
            "errors": report.errors,
            "tables": self._tables(report),
            "fits": [
                (name, ", ".join(f"{k}={_format(v)}" for k, v in sorted(fit.items())))
                for name, fit in sorted(report.fits.items())
            ],
        }

    def render_markdown(self, report: ExperimentReport) -> str:
        markdown = self.markdown_template.render(**self._variables(report))
        logging.debug(f"Rendered markdown report for {report.name!r} ({len(markdown)} characters)")
        return markdown

    def render_summary(self, report: ExperimentReport) -> str:
        return self.text_template.render(**self._variables(report))
