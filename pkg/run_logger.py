"""
Gemeinsames Logging für alle Pipeline-Schritte
Debug-Log (Textdatei) und strukturiertes Run-Log (JSON Lines)
"""

import os
import sys
import json
import threading
from collections import deque
from datetime import datetime
from pathlib import Path


# Nur die letzten Warnungen bleiben im Speicher, gezählt werden alle
MAX_KEPT_WARNINGS = 500


class Logger:
    # Log level hierarchy
    LOG_LEVELS = {'DEBUG': 0, 'INFO': 1, 'WARNING': 2, 'ERROR': 3}

    def __init__(self, filename=None, run_log_filename=None):
        self.filename = filename
        self.run_log_filename = run_log_filename
        self.log_file = None
        self.run_log_file = None
        self.warnings = deque(maxlen=MAX_KEPT_WARNINGS)
        self.warning_count = 0
        self._seq = 0
        self._lock = threading.RLock()

        if filename:
            Path(filename).parent.mkdir(parents=True, exist_ok=True)
            self.log_file = open(filename, 'w', encoding='utf-8')
        if run_log_filename:
            Path(run_log_filename).parent.mkdir(parents=True, exist_ok=True)
            self.run_log_file = open(run_log_filename, 'w', encoding='utf-8')

        # Lese LOG_LEVEL aus Umgebung (Standard: INFO)
        log_level_str = os.getenv('LOG_LEVEL', 'INFO').upper()
        self.log_level = self.LOG_LEVELS.get(log_level_str, 1)

    def _ensure_open(self):
        """Stelle sicher dass die Datei offen ist"""
        if self.filename and (self.log_file is None or self.log_file.closed):
            self.log_file = open(self.filename, 'a', encoding='utf-8')

    def _write_file(self, message):
        if not self.filename:
            return
        self._ensure_open()
        self.log_file.write(message + '\n')
        self.log_file.flush()

    def close(self):
        with self._lock:
            if self.log_file and not self.log_file.closed:
                self.log_file.close()
            if self.run_log_file and not self.run_log_file.closed:
                self.run_log_file.close()

    def detail(self, message, level='INFO'):
        """Schreibe ins Log wenn Level passt"""
        level = level.upper()
        message_level = self.LOG_LEVELS.get(level, 1)
        with self._lock:
            if message_level >= self.LOG_LEVELS['WARNING']:
                self.warnings.append(message)
                self.warning_count += 1
                self.event('warning', level=level, message=message)
            if message_level >= self.log_level:
                self._write_file(f"[{level}] {message}")

    def summary(self, message):
        """Schreibe ins Terminal und Log"""
        with self._lock:
            sys.stdout.write(message + '\n')
            sys.stdout.flush()
            self._write_file(message)

    def event(self, event_kind, /, **fields):
        """Hänge einen Eintrag an das Run-Log an"""
        with self._lock:
            self._seq += 1
            if self.run_log_file is None or self.run_log_file.closed:
                return
            entry = {'seq': self._seq, 'event': event_kind, 'time': datetime.now().isoformat(timespec='seconds')}
            entry.update(fields)
            self.run_log_file.write(json.dumps(entry, ensure_ascii=False, default=str) + '\n')
            self.run_log_file.flush()


# Ohne gestarteten Lauf wird nur ins Terminal bzw. in den Speicher geloggt
logger = Logger()


def get_logger():
    return logger


def start_run_logging(out_dir):
    """Öffne Debug-Log und Run-Log für einen Lauf unter <out>/logs/"""
    global logger
    logger.close()
    logs_dir = Path(out_dir) / 'logs'
    logger = Logger(logs_dir / 'survey_debug.log', logs_dir / 'run_log.jsonl')
    return logger


def reset_logger():
    global logger
    logger.close()
    logger = Logger()
    return logger


# Globale print-Funktionen
def print_detail(msg, level='DEBUG'):
    logger.detail(str(msg), level=level)


def print_summary(msg):
    logger.summary(str(msg))


def log_event(event_kind, /, **fields):
    logger.event(event_kind, **fields)
