// Dashboard-wide selection state.
//
// The schematic writes the variable when an element is clicked; every
// telemetry panel subscribes and re-queries on each change. Panels must
// never cache across a change, so the emitter fires even when the same
// value is selected twice.

export interface DashboardVariable {
  name: string;
  value: string;
}

type Listener = (selected: DashboardVariable | null) => void;

export class DashboardState {
  private selected: DashboardVariable | null = null;
  private listeners = new Set<Listener>();

  select(thingId: string | null): void {
    this.selected = thingId === null ? null : { name: "twin", value: thingId };
    for (const fn of [...this.listeners]) fn(this.selected);
  }

  get(): DashboardVariable | null {
    return this.selected;
  }

  onChange(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }
}
