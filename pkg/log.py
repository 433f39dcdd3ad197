import os
import json
import threading
from datetime import datetime
from collections import deque

from PyQt6.QtCore import QObject, pyqtSignal


class LogManager(QObject):
    """Real-time solver log plus a persisted history of CLI runs"""

    # Signals for real-time log updates
    log_updated = pyqtSignal(str, str)  # message, level
    run_completed = pyqtSignal(dict)  # run info

    LEVELS = ("INFO", "PROGRESS", "WARNING", "SUCCESS", "ERROR")

    def __init__(self, history_file=None, max_realtime_logs=200, max_history_entries=50):
        super().__init__()
        self.max_realtime_logs = max_realtime_logs
        self.max_history_entries = max_history_entries

        # Real-time logs storage (in memory)
        self.realtime_logs = deque(maxlen=max_realtime_logs)

        # Run history storage (persistent, optional)
        self.history_file = history_file
        self.run_history = self.load_history()

        self.lock = threading.Lock()

        self.current_session = {
            'start_time': None,
            'command': None,
            'input': None,
            'status': 'idle',
            'logs': []
        }

    def start_run_session(self, command, input_path=None):
        """Start a new run session"""
        with self.lock:
            self.current_session = {
                'start_time': datetime.now(),
                'command': command,
                'input': input_path,
                'status': 'running',
                'logs': [],
                'end_time': None,
                'artifacts': [],
            }

        self.log("INFO", f"Started {command}" + (f" on {input_path}" if input_path else ""))

    def log(self, level, message):
        """Add a log entry to real-time logs"""
        if level not in self.LEVELS:
            level = "INFO"
        timestamp = datetime.now().strftime("%H:%M:%S")
        log_entry = {
            'timestamp': timestamp,
            'level': level,
            'message': message
        }

        with self.lock:
            self.realtime_logs.append(log_entry)
            if self.current_session['status'] == 'running':
                self.current_session['logs'].append(log_entry)

        self.log_updated.emit(f"[{timestamp}] {message}", level)

    def progress(self, current, total, what):
        self.log("PROGRESS", f"{what}: {current}/{total}")

    def complete_run_session(self, success=True, error_message=None, artifacts=None):
        """Complete the current run session"""
        with self.lock:
            if self.current_session['status'] != 'running':
                return

            self.current_session['end_time'] = datetime.now()
            self.current_session['status'] = 'completed' if success else 'failed'
            if artifacts:
                self.current_session['artifacts'] = list(artifacts)
            if error_message:
                self.current_session['error'] = error_message

            duration = self.current_session['end_time'] - self.current_session['start_time']
            self.current_session['duration'] = str(duration).split('.')[0]

            self.add_to_history(self.current_session.copy())

        if success:
            self.log("SUCCESS", f"{self.current_session['command']} finished")
        else:
            self.log("ERROR", f"{self.current_session['command']} failed: {error_message or 'unknown error'}")

        self.run_completed.emit(self.current_session.copy())

    def add_to_history(self, session_data):
        """Add a finished run to history"""
        history_entry = {
            'timestamp': session_data['start_time'].isoformat() if session_data['start_time'] else None,
            'end_time': session_data['end_time'].isoformat() if session_data['end_time'] else None,
            'command': session_data['command'],
            'input': session_data.get('input'),
            'status': session_data['status'],
            'duration': session_data.get('duration', 'Unknown'),
            'artifacts': session_data.get('artifacts', []),
            'error': session_data.get('error'),
            'log_count': len(session_data.get('logs', []))
        }

        self.run_history.append(history_entry)

        # Keep only the last N entries
        if len(self.run_history) > self.max_history_entries:
            self.run_history = self.run_history[-self.max_history_entries:]

        self.save_history()

    def load_history(self):
        """Load run history from file"""
        if not self.history_file:
            return []
        try:
            if os.path.exists(self.history_file):
                with open(self.history_file, 'r', encoding='utf-8') as f:
                    return json.load(f)
        except (OSError, ValueError) as e:
            self.realtime_logs.append({'timestamp': '', 'level': 'WARNING',
                                       'message': f"Error loading history: {e}"})
        return []

    def save_history(self):
        """Save run history to file"""
        if not self.history_file:
            return
        try:
            directory = os.path.dirname(self.history_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.history_file, 'w', encoding='utf-8') as f:
                json.dump(self.run_history, f, indent=2, ensure_ascii=False)
        except OSError as e:
            self.realtime_logs.append({'timestamp': '', 'level': 'WARNING',
                                       'message': f"Error saving history: {e}"})

    def get_realtime_logs(self):
        with self.lock:
            return list(self.realtime_logs)

    def get_run_history(self):
        return self.run_history.copy()


def log_to(log_manager, level, message):
    """Forward to an optional LogManager; library code calls this instead of branching."""
    if log_manager is not None:
        log_manager.log(level, message)
