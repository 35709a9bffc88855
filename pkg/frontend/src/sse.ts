// Incremental server-sent-events parser. Works over fetch body streams so
// the same code runs in the browser and under test in node.

export interface SseEvent {
  event: string; // "message" when the server sent no event field
  data: string;
}

export interface SseParser {
  push(chunk: string): void;
  end(): void;
}

export function createSseParser(onEvent: (ev: SseEvent) => void): SseParser {
  let buffer = "";

  function emitBlock(block: string) {
    let event = "message";
    const dataLines: string[] = [];
    for (const rawLine of block.split("\n")) {
      const line = rawLine.endsWith("\r") ? rawLine.slice(0, -1) : rawLine;
      if (line.startsWith("event:")) {
        event = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        dataLines.push(line.slice(5).replace(/^ /, ""));
      }
      // comments (:) and other fields are ignored
    }
    if (dataLines.length > 0) {
      onEvent({ event, data: dataLines.join("\n") });
    }
  }

  return {
    push(chunk: string) {
      buffer += chunk;
      for (;;) {
        const sep = buffer.indexOf("\n\n");
        if (sep < 0) break;
        const block = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        if (block.trim().length > 0) emitBlock(block);
      }
    },
    end() {
      if (buffer.trim().length > 0) emitBlock(buffer);
      buffer = "";
    },
  };
}
