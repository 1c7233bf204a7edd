"""Scaled-down train-ticket domain: order/payment service stubs behind the
activity boundary, plus the ticket-cancellation workflow in faulty and fixed
variants and a booking workflow exercising timers and signals.

The stubs are in-process state tables persisted to a flat file so that worker
crashes preserve domain state; the orchestration semantics under test are the
same as with networked services.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any

from duraflow.model import EngineError, RetryPolicy
from duraflow.replay import WorkflowDefinition, WorkflowFailure
from duraflow.worker import ActivityHandler, ActivityInvocation

TRAINTICKET_QUEUE = "trainticket-q"

ORDER_PAID = "Paid"
ORDER_CANCELLING = "Cancelling"
ORDER_CANCELLED = "Cancelled"
ORDER_REFUNDED = "Refunded"

_LEGAL_TRANSITIONS = {
    (ORDER_PAID, ORDER_CANCELLING),
    (ORDER_CANCELLING, ORDER_CANCELLED),
    (ORDER_CANCELLING, ORDER_REFUNDED),
    (ORDER_PAID, ORDER_REFUNDED),
    (ORDER_REFUNDED, ORDER_CANCELLED),
}


class UnknownOrder(EngineError):
    code = "UnknownOrder"


class IllegalTransition(EngineError):
    code = "IllegalTransition"


class AlreadyCancelled(EngineError):
    code = "AlreadyCancelled"


class OrderStore:
    """Thread-safe order table persisted to one JSON file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._orders: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            self._orders = json.loads(self.path.read_text())

    def _save_locked(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("w") as fh:
            json.dump(self._orders, fh, indent=2)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)

    def seed(self, count: int, amount_cents: int = 12_500) -> list[str]:
        with self._lock:
            created = []
            base = len(self._orders)
            for i in range(count):
                order_id = f"order-{base + i + 1:04d}"
                self._orders[order_id] = {
                    "order_id": order_id,
                    "status": ORDER_PAID,
                    "amount_cents": amount_cents,
                    "refund_receipt": None,
                    "seat": None,
                }
                created.append(order_id)
            self._save_locked()
            return created

    def create(self, order_id: str, amount_cents: int = 12_500) -> dict[str, Any]:
        """Create an order if absent; repeats return the existing order
        unchanged (creation runs inside an at-least-once activity)."""
        with self._lock:
            if order_id not in self._orders:
                self._orders[order_id] = {
                    "order_id": order_id,
                    "status": ORDER_PAID,
                    "amount_cents": amount_cents,
                    "refund_receipt": None,
                    "seat": None,
                }
                self._save_locked()
            return dict(self._orders[order_id])

    def get(self, order_id: str) -> dict[str, Any]:
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise UnknownOrder(f"no order {order_id!r}")
            return dict(order)

    def order_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._orders)

    def set_status(self, order_id: str, status: str) -> dict[str, Any]:
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise UnknownOrder(f"no order {order_id!r}")
            current = order["status"]
            if current == status:
                return dict(order)  # idempotent repeat
            if (current, status) not in _LEGAL_TRANSITIONS:
                raise IllegalTransition(f"order {order_id}: {current} -> {status} is not allowed")
            order["status"] = status
            self._save_locked()
            return dict(order)

    def refund(self, order_id: str) -> dict[str, Any]:
        """Refund the purchase amount; the receipt makes retries idempotent."""
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise UnknownOrder(f"no order {order_id!r}")
            if order["refund_receipt"] is not None:
                return dict(order)  # already refunded: same receipt
            if order["status"] == ORDER_CANCELLED:
                raise AlreadyCancelled("order already cancelled")
            if order["status"] not in (ORDER_PAID, ORDER_CANCELLING):
                raise IllegalTransition(
                    f"order {order_id}: cannot refund from {order['status']}"
                )
            order["status"] = ORDER_REFUNDED
            order["refund_receipt"] = f"rcpt-{order_id}"
            self._save_locked()
            return dict(order)

    def set_seat(self, order_id: str, seat: str | None) -> dict[str, Any]:
        with self._lock:
            order = self._orders.get(order_id)
            if order is None:
                raise UnknownOrder(f"no order {order_id!r}")
            order["seat"] = seat
            self._save_locked()
            return dict(order)


# ---------------------------------------------------------------------------
# Activities. All idempotent; all side effects live here, never in workflows.
# ---------------------------------------------------------------------------


def _order_id(invocation: ActivityInvocation) -> str:
    return json.loads(invocation.input)["order_id"]


def demo_activities(orders: OrderStore) -> dict[str, ActivityHandler]:
    def set_order_cancelling(invocation: ActivityInvocation) -> str:
        return json.dumps(orders.set_status(_order_id(invocation), ORDER_CANCELLING))

    def set_order_cancelled(invocation: ActivityInvocation) -> str:
        return json.dumps(orders.set_status(_order_id(invocation), ORDER_CANCELLED))

    def draw_back_money(invocation: ActivityInvocation) -> str:
        order = orders.refund(_order_id(invocation))
        return json.dumps(
            {"receipt": order["refund_receipt"], "amount_cents": order["amount_cents"]}
        )

    def reserve_seat(invocation: ActivityInvocation) -> str:
        order_id = _order_id(invocation)
        order = orders.set_seat(order_id, f"seat-{order_id}")
        return json.dumps({"seat": order["seat"]})

    def release_seat(invocation: ActivityInvocation) -> str:
        orders.set_seat(_order_id(invocation), None)
        return json.dumps({"released": True})

    def charge(invocation: ActivityInvocation) -> str:
        order = orders.get(_order_id(invocation))
        return json.dumps({"charged_cents": order["amount_cents"]})

    def create_order(invocation: ActivityInvocation) -> str:
        request = json.loads(invocation.input)
        return json.dumps(
            orders.create(request["order_id"], int(request.get("amount_cents", 12_500)))
        )

    def calculate_price(invocation: ActivityInvocation) -> str:
        request = json.loads(invocation.input)
        base = int(request.get("base_cents", 10_000))
        seats = int(request.get("seats", 1))
        fee = int(request.get("fee_cents", 500))
        # The classic internal bug: the booking fee is charged per seat
        # instead of once per order. The engine cannot see this; the workflow
        # completes "successfully" with a wrong total.
        total = base * seats + fee * seats
        return json.dumps({"total_cents": total})

    return {
        "setOrderCancellingActivity": set_order_cancelling,
        "setOrderCancelledActivity": set_order_cancelled,
        "drawBackMoneyActivity": draw_back_money,
        "reserveSeatActivity": reserve_seat,
        "releaseSeatActivity": release_seat,
        "chargeActivity": charge,
        "createOrderActivity": create_order,
        "calculatePriceActivity": calculate_price,
    }


def correct_price(base_cents: int, seats: int, fee_cents: int) -> int:
    """What calculatePriceActivity should return: one booking fee per order."""
    return base_cents * seats + fee_cents


# ---------------------------------------------------------------------------
# Workflows.
# ---------------------------------------------------------------------------

CANCEL_ACTIVITY_TIMEOUT_MS = 3_000
CHARGE_TIMEOUT_MS = 1_500

# The refund in the faulty variant retries forever so the stuck state stays
# observable instead of collapsing into a workflow failure.
UNLIMITED_RETRIES = RetryPolicy(
    initial_interval_ms=500,
    backoff_coefficient=2.0,
    max_interval_ms=2_000,
    max_attempts=0,
)


def cancel_ticket_fixed() -> WorkflowDefinition:
    """Strictly sequential cancellation: set Cancelling, refund, set Cancelled."""

    async def body(ctx, input_payload: str):
        request = json.loads(input_payload)
        order_ref = json.dumps({"order_id": request["order_id"]})
        await ctx.execute_activity(
            "setOrderCancellingActivity",
            order_ref,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        refund = await ctx.execute_activity(
            "drawBackMoneyActivity",
            order_ref,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        await ctx.execute_activity(
            "setOrderCancelledActivity",
            order_ref,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        return json.dumps({"refunded": True, "receipt": json.loads(refund)["receipt"]})

    return WorkflowDefinition(workflow_type="cancelTicket", body=body)


def cancel_ticket_faulty() -> WorkflowDefinition:
    """The sequence-control bug: refund and final status write race each
    other. If the status write wins, the refund keeps failing against the
    already-cancelled order."""

    async def body(ctx, input_payload: str):
        request = json.loads(input_payload)
        order_ref = json.dumps({"order_id": request["order_id"]})
        await ctx.execute_activity(
            "setOrderCancellingActivity",
            order_ref,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        refund = ctx.start_activity(
            "drawBackMoneyActivity",
            order_ref,
            retry_policy=UNLIMITED_RETRIES,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        cancelled = ctx.start_activity(
            "setOrderCancelledActivity",
            order_ref,
            start_to_close_timeout_ms=CANCEL_ACTIVITY_TIMEOUT_MS,
        )
        await cancelled
        receipt = await refund
        return json.dumps({"refunded": True, "receipt": json.loads(receipt)["receipt"]})

    return WorkflowDefinition(workflow_type="cancelTicketFaulty", body=body)


def book_ticket() -> WorkflowDefinition:
    """Reserve a seat, then race a payment signal against the payment window;
    a timeout releases the seat and fails the booking."""

    async def body(ctx, input_payload: str):
        request = json.loads(input_payload)
        order_ref = json.dumps({"order_id": request["order_id"]})
        window_ms = int(request.get("payment_window_ms", 30_000))
        await ctx.execute_activity("reserveSeatActivity", order_ref)
        payment = ctx.wait_signal("payment")
        window = ctx.start_timer(window_ms)
        winner = await ctx.wait_any(payment, window)
        if winner is payment:
            charged = await ctx.execute_activity(
                "chargeActivity", order_ref, start_to_close_timeout_ms=CHARGE_TIMEOUT_MS
            )
            return json.dumps({"booked": True, "charge": json.loads(charged)})
        await ctx.execute_activity("releaseSeatActivity", order_ref)
        raise WorkflowFailure("payment timeout")

    return WorkflowDefinition(workflow_type="bookTicket", body=body)


def calculate_price_workflow() -> WorkflowDefinition:
    async def body(ctx, input_payload: str):
        return await ctx.execute_activity("calculatePriceActivity", input_payload)

    return WorkflowDefinition(workflow_type="calculatePrice", body=body)


def seed_orders_workflow() -> WorkflowDefinition:
    """Create orders through the activity boundary so harness scripts can
    seed domain state over the plain engine API."""

    async def body(ctx, input_payload: str):
        request = json.loads(input_payload)
        amount = int(request.get("amount_cents", 12_500))
        created = []
        for order_id in request["order_ids"]:
            order = await ctx.execute_activity(
                "createOrderActivity",
                json.dumps({"order_id": order_id, "amount_cents": amount}),
            )
            created.append(json.loads(order)["order_id"])
        return json.dumps({"order_ids": created})

    return WorkflowDefinition(workflow_type="seedOrders", body=body)


def demo_workflows() -> dict[str, WorkflowDefinition]:
    definitions = [
        cancel_ticket_fixed(),
        cancel_ticket_faulty(),
        book_ticket(),
        calculate_price_workflow(),
        seed_orders_workflow(),
    ]
    return {d.workflow_type: d for d in definitions}
