"""
Rules Engine Module - Configurable invariant tolerances
Each rule states the conditions a measured residual must meet; suites are tags
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from src.core.errors import ConfigError, ParseError

logger = logging.getLogger(__name__)


class RuleOperator(Enum):
    """Supported rule operators"""
    EQUALS = "equals"
    NOT_EQUALS = "not_equals"
    GREATER_THAN = "greater_than"
    GREATER_THAN_OR_EQUAL = "greater_than_or_equal"
    LESS_THAN = "less_than"
    LESS_THAN_OR_EQUAL = "less_than_or_equal"
    BETWEEN = "between"
    IS_TRUE = "is_true"
    IS_FALSE = "is_false"
    IS_FINITE = "is_finite"


def _as_float(a: Any) -> Optional[float]:
    if a is None or isinstance(a, bool):
        return None
    try:
        return float(a)
    except (TypeError, ValueError):
        return None


def _compare(test: Callable[[float, Any], bool]) -> Callable[[Any, Any], bool]:
    # a missing or NaN measurement never satisfies a numeric condition
    def check(a, b):
        value = _as_float(a)
        if value is None or math.isnan(value):
            return False
        return test(value, b)
    return check


OPERATORS: Dict[str, Callable[[Any, Any], bool]] = {
    'equals': lambda a, b: a == b,
    'not_equals': lambda a, b: a != b,
    'greater_than': _compare(lambda a, b: a > float(b)),
    'greater_than_or_equal': _compare(lambda a, b: a >= float(b)),
    'less_than': _compare(lambda a, b: a < float(b)),
    'less_than_or_equal': _compare(lambda a, b: a <= float(b)),
    'between': _compare(lambda a, b: float(b[0]) <= a <= float(b[1])),
    'is_true': lambda a, b: bool(a) is True,
    'is_false': lambda a, b: bool(a) is False,
    'is_finite': _compare(lambda a, b: math.isfinite(a)),
}


class Rule:
    """Individual invariant rule"""

    def __init__(self, rule_dict: Dict[str, Any]):
        self.id = rule_dict.get('id', 'unnamed_rule')
        self.name = rule_dict.get('name', '')
        self.description = rule_dict.get('description', '')
        self.enabled = rule_dict.get('enabled', True)
        self.priority = rule_dict.get('priority', 100)
        self.conditions = rule_dict.get('conditions', {})
        self.tags = rule_dict.get('tags', [])

    @property
    def condition_list(self) -> List[Dict[str, Any]]:
        return self.conditions.get('rules', []) if self.conditions else []

    def evaluate_conditions(self, context: Dict[str, Any]) -> bool:
        """Evaluate all conditions for this rule"""
        if not self.conditions:
            return True

        logic = self.conditions.get('logic', 'AND')
        rules = self.condition_list

        if logic == 'AND':
            return all(self._evaluate_single_condition(cond, context) for cond in rules)
        elif logic == 'OR':
            return any(self._evaluate_single_condition(cond, context) for cond in rules)
        else:
            return False

    def _evaluate_single_condition(self, condition: Dict, context: Dict) -> bool:
        actual_value = get_nested_value(context, condition.get('field'))
        operator_func = OPERATORS.get(condition.get('operator'))
        if operator_func:
            return operator_func(actual_value, condition.get('value'))
        return False

    def measured(self, context: Dict[str, Any]) -> Dict[str, Any]:
        """Measured value of every field this rule reads"""
        return {cond.get('field'): get_nested_value(context, cond.get('field')) for cond in self.condition_list}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'name': self.name,
            'description': self.description,
            'enabled': self.enabled,
            'priority': self.priority,
            'conditions': self.conditions,
            'tags': self.tags,
        }


def get_nested_value(context: Dict, path: Optional[str]) -> Any:
    """Get nested value from context using dot notation"""
    if not path:
        return None

    value = context
    for key in path.split('.'):
        if isinstance(value, dict):
            value = value.get(key)
        else:
            return None
    return value


@dataclass
class RuleOutcome:
    """Pass/fail verdict of one rule against one measurement context"""
    rule_id: str
    name: str
    tags: List[str]
    passed: bool
    measured: Dict[str, Any]
    conditions: List[Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rule_id': self.rule_id,
            'name': self.name,
            'tags': self.tags,
            'passed': self.passed,
            'measured': self.measured,
            'conditions': self.conditions,
        }


class RulesEngine:
    """Evaluates invariant rules against measured residuals"""

    def __init__(self, rules_file: Optional[str] = None):
        self.rules: List[Rule] = []
        if rules_file:
            self.load_rules(rules_file)

    def load_rules(self, rules_file: str):
        """Load rules from JSON file"""
        path = Path(rules_file)
        if not path.exists():
            raise ConfigError(f"Rules file {rules_file} not found")
        try:
            with open(path, 'r') as f:
                rules_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, path=str(path), line=e.lineno) from e
        self.rules = [Rule(r) for r in rules_data.get('rules', [])]
        # lower number = higher priority
        self.rules.sort(key=lambda x: x.priority)
        logger.debug("Loaded %d rules from %s", len(self.rules), path)

    @property
    def tags(self) -> List[str]:
        seen: List[str] = []
        for rule in self.rules:
            seen.extend(t for t in rule.tags if t not in seen)
        return seen

    def _selected(self, tags: Optional[List[str]]) -> List[Rule]:
        return [
            rule for rule in self.rules
            if rule.enabled and (not tags or any(tag in rule.tags for tag in tags))
        ]

    def evaluate(self, context: Dict[str, Any], tags: Optional[List[str]] = None) -> List[RuleOutcome]:
        """
        Evaluate all rules against the context

        Args:
            context: measured values, nested by suite
            tags: optional list of tags to filter rules

        Returns:
            One outcome per evaluated rule, in priority order
        """
        return [
            RuleOutcome(
                rule_id=rule.id,
                name=rule.name,
                tags=list(rule.tags),
                passed=rule.evaluate_conditions(context),
                measured=rule.measured(context),
                conditions=rule.condition_list,
            )
            for rule in self._selected(tags)
        ]

    def get_failed_rules(self, context: Dict[str, Any], tags: Optional[List[str]] = None) -> List[Rule]:
        """Rules whose conditions do not hold for the context"""
        return [rule for rule in self._selected(tags) if not rule.evaluate_conditions(context)]

    def validate_rules(self) -> List[Dict[str, Any]]:
        """Validate all loaded rules for errors"""
        errors = []
        rule_ids = [r.id for r in self.rules]

        for rule in self.rules:
            if rule_ids.count(rule.id) > 1:
                errors.append({'rule_id': rule.id, 'error': 'Duplicate rule ID'})
            if not rule.condition_list:
                errors.append({'rule_id': rule.id, 'error': 'No conditions defined', 'severity': 'warning'})
            for cond in rule.condition_list:
                if cond.get('operator') not in OPERATORS:
                    errors.append({'rule_id': rule.id, 'error': f"Unknown operator {cond.get('operator')!r}"})
            if not rule.tags:
                errors.append({'rule_id': rule.id, 'error': 'No suite tag', 'severity': 'warning'})

        return errors

    def export_rules(self, output_file: str):
        """Export current rules to JSON file"""
        with open(output_file, 'w') as f:
            json.dump({'rules': [rule.to_dict() for rule in self.rules]}, f, indent=2)

    def add_rule(self, rule_dict: Dict[str, Any]):
        """Add a new rule at runtime"""
        self.rules.append(Rule(rule_dict))
        self.rules.sort(key=lambda x: x.priority)

    def disable_rule(self, rule_id: str):
        for rule in self.rules:
            if rule.id == rule_id:
                rule.enabled = False
                break
