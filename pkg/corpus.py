"""
Paper-Speicher der Survey-Pipeline
PaperRecord/PaperStore, CSV-Persistenz, Vektorindex und BibTeX-Export
"""

import csv
import re
import threading
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from bibtexparser.bibdatabase import BibDatabase
from bibtexparser.bwriter import BibTexWriter

from run_logger import print_detail, print_summary
from survey_errors import PreconditionError, UnknownBibkeyError, PipelineError


CSV_COLUMNS = ['bibkey', 'paper_id', 'title', 'abstract', 'year', 'url', 'is_review',
               'relevance_score', 'provenance', 'authors']
FULLTEXT_DIR = 'fulltext'

TAG_SURVEY = 'survey-level'
TAG_TRACED = 'traced'

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_CHUNK_OVERLAP = 200

REVIEW_TITLE_WORDS = ('survey', 'review')
_BIBKEY_STOPWORDS = {'a', 'an', 'the', 'on', 'of', 'for', 'in', 'to', 'and', 'towards', 'toward', 'from', 'with'}


def subsection_tag(subsection_id):
    return f"subsection:{subsection_id}"


def _ascii_slug(text):
    text = unicodedata.normalize('NFKD', text or '').encode('ascii', 'ignore').decode('ascii')
    return re.sub(r'[^a-z0-9]', '', text.lower())


def make_bibkey(authors, year, title):
    """Bibkey-Grammatik: nachname des Erstautors + Jahr + erstes Titelwort"""
    surname = 'anon'
    if authors:
        parts = str(authors[0]).replace(',', ' ').split()
        if parts:
            # "Nachname, Vorname" oder "Vorname Nachname"
            surname = parts[0] if ',' in str(authors[0]) else parts[-1]
            surname = _ascii_slug(surname) or 'anon'
    first_token = 'paper'
    for word in re.findall(r"[A-Za-z0-9]+", title or ''):
        if word.lower() not in _BIBKEY_STOPWORDS:
            first_token = _ascii_slug(word) or first_token
            break
    return f"{surname}{year if year else 'nd'}{first_token}"


def is_review_from_metadata(publication_types, title):
    """Review-Erkennung über Publikationstyp, sonst Titel-Heuristik"""
    if publication_types:
        return any('review' in str(t).lower() for t in publication_types)
    title_words = set(re.findall(r'[a-z]+', (title or '').lower()))
    return any(word in title_words for word in REVIEW_TITLE_WORDS)


@dataclass
class PaperRecord:
    bibkey: str
    paper_id: str
    title: str
    abstract: str = ''
    year: Optional[int] = None
    url: Optional[str] = None
    is_review: bool = False
    full_text: Optional[str] = None
    relevance_score: Optional[int] = None
    authors: list = field(default_factory=list)
    # Kosinus zur Anfrage, nur während der Retrieval-Schritte
    similarity: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.relevance_score is not None and not 0 <= self.relevance_score <= 100:
            raise ValueError(f"relevance_score außerhalb [0,100]: {self.relevance_score}")
        if self.full_text is not None and not self.full_text.strip():
            self.full_text = None
        self.abstract = self.abstract or ''
        self.authors = list(self.authors or [])

    @classmethod
    def create(cls, paper_id, title, abstract='', year=None, url=None, authors=None,
               publication_types=None, full_text=None):
        """Neuer Datensatz mit vorläufigem Bibkey (wird beim Upsert entkollidiert)"""
        authors = list(authors or [])
        return cls(
            bibkey=make_bibkey(authors, year, title),
            paper_id=str(paper_id),
            title=title.strip(),
            abstract=(abstract or '').strip(),
            year=int(year) if year else None,
            url=url or None,
            is_review=is_review_from_metadata(publication_types, title),
            full_text=full_text,
            authors=authors,
        )

    @property
    def text(self):
        """Volltext falls vorhanden, sonst Abstract"""
        return self.full_text or self.abstract

    def richness(self):
        return (1 if self.full_text else 0, 1 if self.abstract else 0)


class PaperStore:
    """Speicher aller Papers eines Laufs mit Herkunfts-Tags pro Bibkey"""

    def __init__(self):
        self.records = {}
        self.provenance = {}
        self.skipped_rows = 0
        self._by_paper_id = {}
        self._lock = threading.RLock()

    def __len__(self):
        return len(self.records)

    def __contains__(self, bibkey):
        return bibkey in self.records

    def __eq__(self, other):
        if not isinstance(other, PaperStore):
            return NotImplemented
        return self.records == other.records and self.provenance == other.provenance

    def get(self, bibkey):
        return self.records.get(bibkey)

    def by_paper_id(self, paper_id):
        bibkey = self._by_paper_id.get(paper_id)
        return self.records.get(bibkey) if bibkey else None

    def keys(self):
        return sorted(self.records)

    def tags(self, bibkey):
        return set(self.provenance.get(bibkey, set()))

    def records_with_tag(self, tag):
        return [self.records[k] for k in sorted(self.records) if tag in self.provenance.get(k, set())]

    def _free_bibkey(self, base):
        if base not in self.records:
            return base
        for suffix in 'bcdefghijklmnopqrstuvwxyz':
            candidate = f"{base}-{suffix}"
            if candidate not in self.records:
                return candidate
        counter = 2
        while f"{base}-{counter}" in self.records:
            counter += 1
        return f"{base}-{counter}"

    def _merge(self, existing, incoming):
        """Bei gleicher paper_id bleibt der reichere Datensatz (Volltext > nur Abstract)"""
        base, other = (incoming, existing) if incoming.richness() > existing.richness() else (existing, incoming)
        updates = {'bibkey': existing.bibkey}
        for name in ('abstract', 'year', 'url', 'authors', 'relevance_score', 'full_text'):
            if getattr(base, name) in (None, '', []) and getattr(other, name) not in (None, '', []):
                updates[name] = getattr(other, name)
        return replace(base, **updates)

    def upsert(self, records, provenance_tag):
        """Füge Papers ein oder führe sie zusammen; liefert die Bibkeys in Eingabereihenfolge"""
        bibkeys = []
        with self._lock:
            for record in records:
                if not record.title or not record.title.strip():
                    raise PreconditionError(f"Paper {record.paper_id} ohne Titel")
                existing_key = self._by_paper_id.get(record.paper_id)
                if existing_key:
                    self.records[existing_key] = self._merge(self.records[existing_key], record)
                    bibkey = existing_key
                else:
                    bibkey = self._free_bibkey(record.bibkey or make_bibkey(record.authors, record.year, record.title))
                    self.records[bibkey] = replace(record, bibkey=bibkey)
                    self._by_paper_id[record.paper_id] = bibkey
                self.provenance.setdefault(bibkey, set()).add(provenance_tag)
                bibkeys.append(bibkey)
        return bibkeys

    def subset(self, bibkeys):
        """Kopie mit den angegebenen Bibkeys (Herkunft bleibt erhalten)"""
        sub = PaperStore()
        for bibkey in sorted(set(bibkeys)):
            if bibkey not in self.records:
                raise UnknownBibkeyError(f"Unbekannter Bibkey: {bibkey}")
            sub.records[bibkey] = self.records[bibkey]
            sub.provenance[bibkey] = set(self.provenance.get(bibkey, set()))
            sub._by_paper_id[self.records[bibkey].paper_id] = bibkey
        return sub

    def copy(self):
        return self.subset(self.records)


def upsert(store, records, provenance_tag):
    store.upsert(records, provenance_tag)
    return store


# ========== CSV ==========

def save_csv(store, path):
    """Speichere Store als CSV; Volltexte als Sidecar-Dateien unter fulltext/<bibkey>.txt"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fulltext_dir = path.parent / FULLTEXT_DIR

    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for bibkey in store.keys():
            record = store.records[bibkey]
            writer.writerow([
                record.bibkey,
                record.paper_id,
                record.title,
                record.abstract,
                '' if record.year is None else record.year,
                record.url or '',
                'true' if record.is_review else 'false',
                '' if record.relevance_score is None else record.relevance_score,
                '|'.join(sorted(store.provenance.get(bibkey, set()))),
                '; '.join(record.authors),
            ])
            if record.full_text:
                fulltext_dir.mkdir(parents=True, exist_ok=True)
                with open(fulltext_dir / f"{bibkey}.txt", 'w', encoding='utf-8', newline='') as ft:
                    ft.write(record.full_text)

    print_detail(f"Store gespeichert: {path} ({len(store)} Papers)", level='INFO')
    return path


def _parse_row(row, fulltext_dir):
    if None in row or any(row.get(c) is None for c in CSV_COLUMNS):
        raise ValueError("falsche Spaltenanzahl")
    if not row['bibkey'] or not row['paper_id'] or not row['title']:
        raise ValueError("bibkey, paper_id oder title fehlt")
    if row['is_review'] not in ('true', 'false'):
        raise ValueError(f"is_review ungültig: {row['is_review']}")
    year = int(row['year']) if row['year'] else None
    relevance = int(row['relevance_score']) if row['relevance_score'] else None
    full_text = None
    sidecar = fulltext_dir / f"{row['bibkey']}.txt"
    if sidecar.exists():
        with open(sidecar, 'r', encoding='utf-8', newline='') as ft:
            full_text = ft.read()
    record = PaperRecord(
        bibkey=row['bibkey'],
        paper_id=row['paper_id'],
        title=row['title'],
        abstract=row['abstract'],
        year=year,
        url=row['url'] or None,
        is_review=row['is_review'] == 'true',
        full_text=full_text,
        relevance_score=relevance,
        authors=[a.strip() for a in row['authors'].split(';') if a.strip()],
    )
    tags = {t for t in row['provenance'].split('|') if t}
    return record, tags


def load_csv(path):
    """Lade Store aus CSV; fehlerhafte Zeilen werden übersprungen und gezählt"""
    path = Path(path)
    fulltext_dir = path.parent / FULLTEXT_DIR
    store = PaperStore()
    skipped = 0

    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in CSV_COLUMNS):
            raise PipelineError(f"{path}: CSV-Kopfzeile passt nicht zum Schema", stage='corpus')
        for line_number, row in enumerate(reader, start=2):
            try:
                record, tags = _parse_row(row, fulltext_dir)
                if record.bibkey in store.records or store.by_paper_id(record.paper_id):
                    raise ValueError("doppelter bibkey oder paper_id")
            except ValueError as e:
                skipped += 1
                print_detail(f"{path}: Zeile {line_number} übersprungen ({e})", level='WARNING')
                continue
            store.records[record.bibkey] = record
            store.provenance[record.bibkey] = tags
            store._by_paper_id[record.paper_id] = record.bibkey

    store.skipped_rows = skipped
    if skipped:
        print_summary(f"⚠ {skipped} fehlerhafte Zeile(n) in {path.name} übersprungen")
    return store


# ========== VEKTORINDEX ==========

def chunk_text(text, size=DEFAULT_CHUNK_SIZE, overlap=DEFAULT_CHUNK_OVERLAP):
    """Zerlege Text in Stücke fester Länge mit Überlappung; das letzte Stück endet am Textende"""
    if overlap >= size:
        raise PreconditionError("chunk_overlap muss kleiner als chunk_size sein")
    if not text:
        return []
    chunks = []
    start = 0
    while True:
        end = min(start + size, len(text))
        chunks.append(text[start:end])
        if end >= len(text):
            return chunks
        start = end - overlap


@dataclass(eq=False)
class IndexEntry:
    key: str
    bibkey: str
    text: str
    embedding: object


class VectorIndex:
    """Dichte Suche über Abstract- und Chunk-Einträge"""

    def __init__(self, entries):
        self.entries = list(entries)
        dimensions = {e.embedding.dimension for e in self.entries}
        if len(dimensions) > 1:
            raise PreconditionError(f"Uneinheitliche Embedding-Dimensionen im Index: {sorted(dimensions)}")
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise PreconditionError("Doppelte Schlüssel im Index")
        if self.entries:
            matrix = np.vstack([e.embedding.vector for e in self.entries])
            norms = np.linalg.norm(matrix, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self.matrix = matrix / norms
        else:
            self.matrix = np.zeros((0, 0))

    def __len__(self):
        return len(self.entries)

    @property
    def dimension(self):
        return self.entries[0].embedding.dimension if self.entries else 0

    def keys(self):
        return [e.key for e in self.entries]

    def search(self, query_embedding, k, bibkeys=None):
        """Top-k Einträge nach Kosinus; Gleichstand bleibt in Indexreihenfolge"""
        if not self.entries or k < 1:
            return []
        query = np.asarray(query_embedding.vector, dtype=float)
        norm = np.linalg.norm(query)
        scores = self.matrix @ (query / norm if norm else query)
        allowed = None if bibkeys is None else set(bibkeys)
        candidates = [i for i, e in enumerate(self.entries) if allowed is None or e.bibkey in allowed]
        candidates.sort(key=lambda i: -scores[i])
        return [(self.entries[i], float(scores[i])) for i in candidates[:k]]


def build_index(store, embedder, chunk_size=DEFAULT_CHUNK_SIZE, chunk_overlap=DEFAULT_CHUNK_OVERLAP,
                batch_size=64):
    """Ein Eintrag pro Bibkey (Titel + Abstract) plus Volltext-Chunks unter bibkey#chunk-i"""
    if len(store) == 0:
        raise PreconditionError("build_index() braucht einen nicht leeren Store")

    keyed_texts = []
    for bibkey in store.keys():
        record = store.records[bibkey]
        head = record.title if not record.abstract else f"{record.title}. {record.abstract}"
        keyed_texts.append((bibkey, bibkey, head))
        if record.full_text:
            for i, chunk in enumerate(chunk_text(record.full_text, chunk_size, chunk_overlap)):
                if chunk.strip():
                    keyed_texts.append((f"{bibkey}#chunk-{i}", bibkey, chunk))

    entries = []
    for start in range(0, len(keyed_texts), batch_size):
        batch = keyed_texts[start:start + batch_size]
        embeddings = embedder.embed([text for _, _, text in batch])
        entries.extend(IndexEntry(key, bibkey, text, emb) for (key, bibkey, text), emb in zip(batch, embeddings))

    print_detail(f"Index gebaut: {len(entries)} Einträge aus {len(store)} Papers", level='DEBUG')
    return VectorIndex(entries)


# ========== BIBTEX ==========

def _bibtex_value(text):
    text = str(text).replace('{', '').replace('}', '')
    return re.sub(r'(?<!\\)([&%#])', r'\\\1', text)


def compile_bibtex(store, cited_bibkeys):
    """Ein Eintrag pro zitiertem Bibkey, sortiert; fehlende Felder werden weggelassen"""
    unknown = sorted(set(cited_bibkeys) - set(store.records))
    if unknown:
        raise UnknownBibkeyError(f"Unbekannte Bibkeys: {', '.join(unknown)}", stage='corpus')

    db = BibDatabase()
    for bibkey in sorted(set(cited_bibkeys)):
        record = store.records[bibkey]
        entry = {'ENTRYTYPE': 'article', 'ID': bibkey, 'title': _bibtex_value(record.title)}
        if record.authors:
            entry['author'] = ' and '.join(_bibtex_value(a) for a in record.authors)
        if record.year is not None:
            entry['year'] = str(record.year)
        if record.url:
            entry['url'] = record.url
        db.entries.append(entry)

    writer = BibTexWriter()
    writer.indent = '  '
    writer.order_entries_by = None
    return writer.write(db)
