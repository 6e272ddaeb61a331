/** Static host for the editor plus a one-hop proxy to the aublend service,
 * so the browser stays same-origin. Point AUBLEND_URL elsewhere if the
 * service is not on the default port.
 *
 *   npm run serve        # builds, then http://127.0.0.1:8600
 */
import express from "express";
import http from "node:http";
import path from "node:path";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));
const upstream = new URL(process.env.AUBLEND_URL ?? "http://127.0.0.1:8471");
const port = Number(process.env.PORT ?? 8600);

const app = express();

app.use("/api", (req, res) => {
  const proxied = http.request(
    {
      hostname: upstream.hostname,
      port: upstream.port,
      path: "/api" + req.url,
      method: req.method,
      headers: { ...req.headers, host: upstream.host },
    },
    (answer) => {
      res.writeHead(answer.statusCode ?? 502, answer.headers);
      answer.pipe(res);
    },
  );
  proxied.on("error", () => {
    res.status(502).json({ error: `aublend service unreachable at ${upstream}` });
  });
  req.pipe(proxied);
});

app.use("/dist", express.static(path.join(here, "dist")));
app.use("/vendor/three", express.static(path.join(here, "node_modules/three")));
app.get("/", (_req, res) => res.sendFile(path.join(here, "index.html")));

app.listen(port, "127.0.0.1", () => {
  console.log(`editor on http://127.0.0.1:${port} -> service ${upstream}`);
});
