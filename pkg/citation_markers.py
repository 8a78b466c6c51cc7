"""
Erkennung von Zitationsmarkern in Passagen und Entwürfen
Numerisch ([17], [3, 5], [3-5]), Autor-Jahr ((Ge et al., 2023), Smith et al., 2022)
sowie \\cite{bibkey}-Platzhalter der erzeugten Texte
"""

import re
from dataclasses import dataclass
from typing import Optional


NUMERIC = 'numeric'
AUTHOR_YEAR = 'author-year'

_SURNAME = r"[A-Z][A-Za-z'’\-]*[A-Za-z]"
_AUTHORS = rf"{_SURNAME}(?:\s+et\s+al\.?|\s+(?:&|and)\s+{_SURNAME})"
_YEAR = r"(?:19|20)\d{2}[a-z]?"
_PREFIX = r"(?:(?:e\.g\.|i\.e\.|see|cf\.)\s*,?\s*)?"

NUMERIC_GROUP_RE = re.compile(r"\[(\s*\d{1,4}\s*(?:[-–]\s*\d{1,4}\s*)?(?:[,;]\s*\d{1,4}\s*(?:[-–]\s*\d{1,4}\s*)?)*)\]")
NUMERIC_ITEM_RE = re.compile(r"(\d{1,4})(?:\s*[-–]\s*(\d{1,4}))?")
# [12]–[14] als ein Bereich
BRACKET_RANGE_RE = re.compile(r"\[\s*(\d{1,4})\s*\]\s*[-–]\s*\[\s*(\d{1,4})\s*\]")
PAREN_GROUP_RE = re.compile(r"\(([^()]{1,400})\)")
PAREN_PART_RE = re.compile(rf"^\s*{_PREFIX}(?P<authors>{_AUTHORS}|{_SURNAME}),?\s+(?P<year>{_YEAR})\s*$")
NARRATIVE_RE = re.compile(
    rf"(?<![A-Za-z])(?P<authors>{_AUTHORS})(?:,?\s+(?P<year>{_YEAR})|\s*\(\s*(?P<pyear>{_YEAR})\s*\))(?![0-9A-Za-z])"
)

CITE_RE = re.compile(r"\\cite\{([^{}]*)\}")

# Großgeschriebene Wörter vor einer Jahreszahl, die keine Nachnamen sind
NON_SURNAMES = {
    'January', 'February', 'March', 'April', 'May', 'June', 'July', 'August',
    'September', 'October', 'November', 'December', 'Spring', 'Summer', 'Autumn',
    'Fall', 'Winter', 'Table', 'Figure', 'Fig', 'Section', 'Since', 'In', 'Until',
    'From', 'Before', 'After', 'During',
}

MAX_RANGE = 50


@dataclass(frozen=True)
class CitationMarker:
    kind: str
    surface: str
    start: int
    end: int
    label: str
    numbers: tuple = ()
    passage_ref: Optional[str] = None

    @property
    def span(self):
        return (self.start, self.end)

    def reference_text(self):
        """Freitext für die Auflösung über das Such-Backend"""
        if self.kind == AUTHOR_YEAR:
            return self.label[1:-1]
        return self.label

    def to_dict(self):
        return {
            'kind': self.kind,
            'surface': self.surface,
            'span': [self.start, self.end],
            'label': self.label,
            'numbers': list(self.numbers),
            'passage_ref': self.passage_ref,
        }


def _normalize_authors(authors):
    authors = re.sub(r'\s+', ' ', authors.strip())
    return re.sub(r'et al\.?$', 'et al.', authors)


def _surname_match(match):
    """Verwerfe Treffer, deren erstes Wort kein Nachname ist (Monate, Table, ...)"""
    if match and match.group('authors').split()[0] not in NON_SURNAMES:
        return match
    return None


def _numbers(first, last):
    a = int(first)
    if not last:
        return (a,)
    b = int(last)
    if b < a or b - a > MAX_RANGE:
        return (a, b)
    return tuple(range(a, b + 1))


def _numeric_markers(text):
    markers = []
    for match in BRACKET_RANGE_RE.finditer(text):
        first, last = match.group(1), match.group(2)
        markers.append(CitationMarker(NUMERIC, match.group(0), match.start(), match.end(), f"[{first}-{last}]",
                                      _numbers(first, last)))
    ranges = [m.span for m in markers]
    for group in NUMERIC_GROUP_RE.finditer(text):
        if _overlaps(group.span(), ranges):
            continue
        items = list(NUMERIC_ITEM_RE.finditer(group.group(1)))
        offset = group.start(1)
        for item in items:
            numbers = _numbers(item.group(1), item.group(2))
            label_body = item.group(1) if not item.group(2) else f"{item.group(1)}-{item.group(2)}"
            if len(items) == 1:
                start, end = group.start(), group.end()
            else:
                start, end = offset + item.start(), offset + item.end()
            markers.append(CitationMarker(NUMERIC, text[start:end], start, end, f"[{label_body}]", numbers))
    return markers


def _parenthetical_markers(text):
    markers = []
    for group in PAREN_GROUP_RE.finditer(text):
        content = group.group(1)
        parts = []
        position = 0
        for raw in content.split(';'):
            parts.append((raw, position))
            position += len(raw) + 1
        matches = [(_surname_match(PAREN_PART_RE.match(raw)), raw, pos) for raw, pos in parts]
        if not all(m for m, _, _ in matches):
            continue
        for match, raw, pos in matches:
            label = f"({_normalize_authors(match.group('authors'))}, {match.group('year')})"
            if len(matches) == 1:
                start, end = group.start(), group.end()
            else:
                stripped = raw.strip()
                start = group.start(1) + pos + raw.index(stripped)
                end = start + len(stripped)
            markers.append(CitationMarker(AUTHOR_YEAR, text[start:end], start, end, label))
    return markers


def _narrative_markers(text):
    markers = []
    for match in NARRATIVE_RE.finditer(text):
        if not _surname_match(match):
            continue
        year = match.group('year') or match.group('pyear')
        label = f"({_normalize_authors(match.group('authors'))}, {year})"
        markers.append(CitationMarker(AUTHOR_YEAR, match.group(0), match.start(), match.end(), label))
    return markers


def _overlaps(span, taken):
    return any(span[0] < end and start < span[1] for start, end in taken)


def detect_markers(text, passage_ref=None):
    """Finde alle Marker; keine überlappenden Spannen, Duplikate (gleiches Label) nur einmal"""
    text = text or ''
    found = []
    taken = []
    for family in (_parenthetical_markers(text), _numeric_markers(text), _narrative_markers(text)):
        accepted = [m for m in family if not _overlaps(m.span, taken)]
        found.extend(accepted)
        taken.extend(m.span for m in accepted)

    found.sort(key=lambda m: m.start)
    seen = set()
    markers = []
    for marker in found:
        if marker.label in seen:
            continue
        seen.add(marker.label)
        markers.append(CitationMarker(marker.kind, marker.surface, marker.start, marker.end,
                                      marker.label, marker.numbers, passage_ref))
    return markers


def strip_markers(text):
    """Entferne Klammer-Marker komplett, ersetze erzählende Marker durch 'prior work'"""
    text = text or ''
    spans = []
    for match in BRACKET_RANGE_RE.finditer(text):
        spans.append((match.start(), match.end(), ''))
    for group in NUMERIC_GROUP_RE.finditer(text):
        spans.append((group.start(), group.end(), ''))
    for group in PAREN_GROUP_RE.finditer(text):
        if _parenthetical_markers(group.group(0)):
            spans.append((group.start(), group.end(), ''))
    for marker in _narrative_markers(text):
        if not _overlaps(marker.span, [(s, e) for s, e, _ in spans]):
            spans.append((marker.start, marker.end, 'prior work'))

    spans.sort(key=lambda s: (s[0], -s[1]))
    pieces = []
    cursor = 0
    for start, end, replacement in spans:
        if start < cursor:
            continue
        pieces.append(text[cursor:start])
        pieces.append(replacement)
        cursor = end
    pieces.append(text[cursor:])
    cleaned = re.sub(r'[ \t]{2,}', ' ', ''.join(pieces))
    return re.sub(r'\s+([.,;:])', r'\1', cleaned).strip()


# ========== \cite-PLATZHALTER ==========

def cite_groups(text):
    """Liste der \\cite{...}-Gruppen als (match, [bibkeys])"""
    groups = []
    for match in CITE_RE.finditer(text or ''):
        keys = [k.strip() for k in match.group(1).split(',') if k.strip()]
        groups.append((match, keys))
    return groups


def cite_keys(text):
    """Alle zitierten Bibkeys in Reihenfolge des ersten Auftretens"""
    keys = []
    for _, group_keys in cite_groups(text):
        for key in group_keys:
            if key not in keys:
                keys.append(key)
    return keys


def remove_cites(text):
    return CITE_RE.sub('', text or '')
