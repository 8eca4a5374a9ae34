"""no_grad must be per-thread: an inference thread toggling it on and off
can never disable gradient tracking for a concurrently training thread."""

import threading
import time

import numpy as np

from nmtbench.tensor import Tensor, grad_enabled, no_grad


def test_no_grad_is_thread_local():
    inside = {}

    def worker():
        with no_grad():
            inside["worker"] = grad_enabled()
            time.sleep(0.05)

    t = threading.Thread(target=worker)
    t.start()
    time.sleep(0.01)
    assert grad_enabled()  # main thread unaffected while worker is inside
    t.join()
    assert inside["worker"] is False
    assert grad_enabled()


def test_interleaved_no_grad_across_threads_cannot_stick():
    # the adversarial interleaving: worker enters, main enters (snapshotting
    # the worker's False under a process-global design), worker exits, main
    # exits; with thread-local state the main thread ends up enabled
    gate_worker_entered = threading.Event()
    gate_main_entered = threading.Event()
    gate_worker_exited = threading.Event()

    def worker():
        with no_grad():
            gate_worker_entered.set()
            gate_main_entered.wait(2.0)
        gate_worker_exited.set()

    t = threading.Thread(target=worker)
    t.start()
    gate_worker_entered.wait(2.0)
    with no_grad():
        gate_main_entered.set()
        gate_worker_exited.wait(2.0)
    t.join()
    assert grad_enabled()
    w = Tensor(np.ones(3), requires_grad=True)
    (w * 2.0).sum().backward()
    assert np.allclose(w.grad, 2.0)


def test_training_thread_keeps_gradients_during_inference_no_grad():
    stop = threading.Event()
    failures = []

    def training_loop():
        while not stop.is_set():
            w = Tensor(np.ones(4), requires_grad=True)
            (w * 3.0).sum().backward()
            if not np.allclose(w.grad, 3.0):
                failures.append("gradient lost")
                return

    trainer = threading.Thread(target=training_loop)
    trainer.start()
    for _ in range(200):
        with no_grad():
            x = Tensor(np.ones(4), requires_grad=True)
            y = (x * 2.0).sum()
            assert y._parents == ()
    stop.set()
    trainer.join()
    assert failures == []
