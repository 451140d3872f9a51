"""HTML parsing, boilerplate pruning and DOM-graph construction.

The parser is built on the stdlib tokenizer (html.parser) with a tree
builder that applies the common HTML5 recovery rules needed for news
pages: void elements never nest, block-level start tags close an open
<p>, list items / table cells / options close their open siblings, and
stray end tags are ignored. Exotic constructs (adoption agency, table
foster parenting, <template>) are out of scope; self-closing syntax on
non-void tags closes the element immediately.

The output of this module is a DomGraph: one node per element and per
non-empty text leaf, parent-child tree edges, a 22-group tag encoding,
the selected main image and the extracted reference text. The graph
file written by `write_graphs` is the contract consumed by training.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser as _StdHTMLParser
from pathlib import Path

from .errors import (
    MalformedDocument,
    NoImage,
    NoReferenceText,
    UnknownNode,
)

# --------------------------------------------------------------------------
# Parse-stage tree
# --------------------------------------------------------------------------

DOCUMENT_TAG = "#document"


class Element:
    __slots__ = ("tag", "attrs", "children", "parent")

    def __init__(self, tag, attrs=None, parent=None):
        self.tag = tag
        self.attrs = attrs or {}
        self.children = []
        self.parent = parent

    def append(self, child):
        child.parent = self
        self.children.append(child)

    def iter(self):
        """Pre-order walk over the subtree, elements and leaves."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Element):
                stack.extend(reversed(node.children))

    def find_all(self, tag):
        return [n for n in self.iter() if isinstance(n, Element) and n.tag == tag]

    def find(self, tag):
        for n in self.iter():
            if isinstance(n, Element) and n.tag == tag:
                return n
        return None

    def __repr__(self):
        return f"<Element {self.tag} children={len(self.children)}>"


class TextLeaf:
    __slots__ = ("content", "parent")

    def __init__(self, content, parent=None):
        self.content = content
        self.parent = parent

    def __repr__(self):
        return f"<TextLeaf {self.content[:30]!r}>"


class CommentLeaf:
    __slots__ = ("content", "parent")

    def __init__(self, content, parent=None):
        self.content = content
        self.parent = parent


VOID_ELEMENTS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}

# Start tags that implicitly close an open <p> (HTML5 "in body" rules).
_P_CLOSERS = {
    "address", "article", "aside", "blockquote", "details", "dialog",
    "dir", "div", "dl", "fieldset", "figcaption", "figure", "footer",
    "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hgroup",
    "hr", "main", "menu", "nav", "ol", "p", "pre", "section",
    "summary", "table", "ul",
}

# Incoming tag -> open sibling tags it closes, with the scope barrier that
# stops the upward scan.
_SIBLING_CLOSERS = {
    "li": ({"li"}, {"ul", "ol", "menu", "dir"}),
    "dt": ({"dt", "dd"}, {"dl"}),
    "dd": ({"dt", "dd"}, {"dl"}),
    "tr": ({"tr", "td", "th"}, {"table"}),
    "td": ({"td", "th"}, {"table"}),
    "th": ({"td", "th"}, {"table"}),
    "thead": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tbody": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tfoot": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "option": ({"option"}, {"select"}),
    "optgroup": ({"option", "optgroup"}, {"select"}),
}

_P_SCOPE_BARRIERS = {"table", "td", "th", "caption", DOCUMENT_TAG}


class _TreeBuilder(_StdHTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = Element(DOCUMENT_TAG)
        self.stack = [self.root]

    # -- recovery helpers --------------------------------------------------

    def _close_through(self, tag):
        """Pop the open stack up to and including the nearest `tag`."""
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return True
        return False

    def _imply_end_tags(self, incoming):
        if incoming in _P_CLOSERS:
            for i in range(len(self.stack) - 1, 0, -1):
                t = self.stack[i].tag
                if t == "p":
                    del self.stack[i:]
                    break
                if t in _P_SCOPE_BARRIERS:
                    break
        rule = _SIBLING_CLOSERS.get(incoming)
        if rule:
            closers, barriers = rule
            for i in range(len(self.stack) - 1, 0, -1):
                t = self.stack[i].tag
                if t in closers:
                    del self.stack[i:]
                    break
                if t in barriers:
                    break

    # -- tokenizer callbacks -----------------------------------------------

    def handle_starttag(self, tag, attrs):
        self._imply_end_tags(tag)
        attr_map = {}
        for name, value in attrs:
            if name not in attr_map:
                attr_map[name] = value if value is not None else ""
        el = Element(tag, attr_map)
        self.stack[-1].append(el)
        if tag not in VOID_ELEMENTS:
            self.stack.append(el)

    def handle_endtag(self, tag):
        if tag in VOID_ELEMENTS:
            return
        self._close_through(tag)

    def handle_data(self, data):
        if data:
            self.stack[-1].append(TextLeaf(data))

    def handle_comment(self, data):
        self.stack[-1].append(CommentLeaf(data))

    def handle_decl(self, decl):
        pass

    def handle_pi(self, data):
        pass


def parse_html(html: bytes | str) -> Element:
    """Parse raw HTML bytes into a document tree.

    Bytes are decoded as UTF-8 with lossy replacement. Raises
    MalformedDocument when nothing at all can be recovered (empty or
    whitespace-only input).
    """
    if isinstance(html, bytes):
        text = html.decode("utf-8", errors="replace")
    else:
        text = html
    if not text.strip():
        raise MalformedDocument("empty document")
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    if not builder.root.children:
        raise MalformedDocument("no element tree recovered")
    return builder.root


# --------------------------------------------------------------------------
# Preprocessing: content root, pruning, image and reference selection
# --------------------------------------------------------------------------

DEFAULT_DENYLIST = frozenset({
    "style", "script", "button", "noscript", "svg", "iframe", "form",
    "input", "select", "nav", "footer", "header-when-outside-article",
    "link", "meta",
})

HEADER_RULE = "header-when-outside-article"


def select_content_root(tree: Element) -> Element:
    """Return the subtree holding the page content.

    Priority order is <main> > <article> > <body>; the first match in
    document order wins. Falls back to the whole tree when none match.
    """
    for tag in ("main", "article", "body"):
        hit = tree.find(tag)
        if hit is not None:
            return hit
    return tree


def normalize_text(text: str) -> str:
    """Collapse whitespace runs to single spaces and trim."""
    return " ".join(text.split())


def prune_tree(tree: Element, denylist=DEFAULT_DENYLIST) -> Element:
    """Rebuild the tree without denylisted subtrees, comments and
    whitespace-only text leaves. The input tree is left untouched."""
    deny = set(denylist)
    header_rule = HEADER_RULE in deny
    deny.discard(HEADER_RULE)

    def rebuild(node, in_article):
        clone = Element(node.tag, dict(node.attrs))
        for child in node.children:
            if isinstance(child, CommentLeaf):
                continue
            if isinstance(child, TextLeaf):
                if child.content.strip():
                    clone.append(TextLeaf(child.content))
                continue
            if child.tag in deny:
                continue
            if header_rule and child.tag == "header" and not (
                in_article or node.tag == "article"
            ):
                continue
            clone.append(rebuild(child, in_article or node.tag == "article"))
        return clone

    root_in_article = False
    parent = tree.parent
    while parent is not None:
        if isinstance(parent, Element) and parent.tag == "article":
            root_in_article = True
            break
        parent = parent.parent
    return rebuild(tree, root_in_article or tree.tag == "article")


_PX_VALUE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(?:px)?\s*$", re.IGNORECASE)


def _style_px(style: str, prop: str):
    m = re.search(
        rf"(?:^|;)\s*{prop}\s*:\s*(\d+(?:\.\d+)?)\s*px\s*(?:;|$)",
        style,
        re.IGNORECASE,
    )
    return float(m.group(1)) if m else None


def _pixel_dim(el: Element, name: str):
    value = el.attrs.get(name)
    if value:
        m = _PX_VALUE.match(value)
        if m:
            return float(m.group(1))
        return None
    style = el.attrs.get("style")
    if style:
        return _style_px(style, name)
    return None


def image_area(el: Element):
    """Pixel area from width/height attributes (inline px styles as a
    fallback); None when either dimension is unknown."""
    w = _pixel_dim(el, "width")
    h = _pixel_dim(el, "height")
    if w is None or h is None:
        return None
    return w * h


def select_main_image(tree: Element) -> Element:
    """Pick the biggest image by declared pixel area.

    Images with unknown dimensions rank below every known-dimension
    image; ties break by document order. Raises NoImage when the tree
    has no <img> at all (page is dropped upstream).
    """
    best = None
    best_area = None
    first_unknown = None
    for node in tree.iter():
        if not isinstance(node, Element) or node.tag != "img":
            continue
        area = image_area(node)
        if area is None:
            if first_unknown is None:
                first_unknown = node
        elif best_area is None or area > best_area:
            best = node
            best_area = area
    if best is not None:
        return best
    if first_unknown is not None:
        return first_unknown
    raise NoImage("no <img> element in pruned tree")


def subtree_text(node) -> str:
    """Whitespace-normalized concatenation of all text in a subtree."""
    if isinstance(node, TextLeaf):
        return normalize_text(node.content)
    parts = []
    for child in node.iter():
        if isinstance(child, TextLeaf):
            parts.append(child.content)
    return normalize_text(" ".join(parts))


def _enclosing_figure(img: Element):
    node = img.parent
    while node is not None:
        if isinstance(node, Element) and node.tag == "figure":
            return node
        node = getattr(node, "parent", None)
    return None


def _caption_of(img: Element):
    figure = _enclosing_figure(img)
    if figure is None:
        return None
    return figure.find("figcaption")


SOURCE_ALT = "alt"
SOURCE_FIGCAPTION = "figcaption"
SOURCE_TITLE = "title-attr"


def extract_reference_text(img: Element, tree: Element):
    """Longest of alt text, enclosing figcaption and title attribute.

    Ties break alt > figcaption > title. Raises NoReferenceText when all
    three are empty; such pages are excluded from the training corpus.
    """
    alt = normalize_text(img.attrs.get("alt", ""))
    caption_el = _caption_of(img)
    caption = subtree_text(caption_el) if caption_el is not None else ""
    title = normalize_text(img.attrs.get("title", ""))
    candidates = [
        (alt, SOURCE_ALT),
        (caption, SOURCE_FIGCAPTION),
        (title, SOURCE_TITLE),
    ]
    best = None
    for text, source in candidates:
        if text and (best is None or len(text) > len(best[0])):
            best = (text, source)
    if best is None:
        raise NoReferenceText("alt, figcaption and title are all empty")
    return best


# --------------------------------------------------------------------------
# Tag groups (22 one-hot groups; the table in docs/tag-groups.md mirrors this)
# --------------------------------------------------------------------------

TAG_GROUP_NAMES = (
    "header", "paragraph", "list", "list_item", "table", "link",
    "inline", "figure", "figcaption", "image", "media", "quote",
    "code", "division", "span", "sectioning", "aside", "time",
    "label", "interactive", "unknown", "text",
)

N_TAG_GROUPS = len(TAG_GROUP_NAMES)  # 22

UNKNOWN_GROUP = TAG_GROUP_NAMES.index("unknown")
TEXT_GROUP = TAG_GROUP_NAMES.index("text")

_GROUP_MEMBERS = {
    "header": ("h1", "h2", "h3", "h4", "h5", "h6", "hgroup"),
    "paragraph": ("p",),
    "list": ("ul", "ol", "dl", "menu", "dir"),
    "list_item": ("li", "dt", "dd"),
    "table": ("table", "thead", "tbody", "tfoot", "tr", "td", "th",
              "caption", "colgroup", "col"),
    "link": ("a",),
    "inline": ("em", "strong", "b", "i", "u", "s", "small", "mark",
               "sub", "sup", "ins", "del", "abbr", "cite", "dfn",
               "kbd", "samp", "var", "q"),
    "figure": ("figure", "picture"),
    "figcaption": ("figcaption",),
    "image": ("img",),
    "media": ("video", "audio", "source", "track", "embed", "object",
              "canvas", "map", "area"),
    "quote": ("blockquote",),
    "code": ("code", "pre"),
    "division": ("div",),
    "span": ("span",),
    "sectioning": ("html", "body", "main", "article", "section",
                   "header", "footer", "nav"),
    "aside": ("aside",),
    "time": ("time",),
    "label": ("label", "legend", "summary", "output"),
    "interactive": ("button", "select", "option", "optgroup",
                    "textarea", "input", "details", "dialog", "form",
                    "fieldset"),
}

TAG_GROUPS = {
    tag: TAG_GROUP_NAMES.index(group)
    for group, tags in _GROUP_MEMBERS.items()
    for tag in tags
}


def tag_group(tag: str) -> int:
    return TAG_GROUPS.get(tag, UNKNOWN_GROUP)


# --------------------------------------------------------------------------
# Graph types
# --------------------------------------------------------------------------

KIND_ELEMENT = "element"
KIND_TEXT = "text"
KIND_IMAGE = "image"
KIND_REFERENCE_HOLDER = "reference-holder"

MIN_TEXT_CHARS = 1  # empty-after-normalization leaves never become nodes

ANCHOR_ATTR = "data-wice-anchor"


@dataclass
class PageRecord:
    page_id: str
    site_id: str
    url: str
    html: bytes
    language_hint: str | None = None


@dataclass
class DomNode:
    node_id: int
    raw_tag: str
    tag_group: int
    kind: str
    text: str | None = None
    is_main_image: bool = False


@dataclass
class DomGraph:
    page_id: str
    nodes: list[DomNode]
    edges: list[tuple[int, int]]
    reference_text: str
    reference_source: str
    site_id: str = ""
    title: str | None = None
    anchors: dict[str, int] = field(default_factory=dict)

    def text_node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.kind == KIND_TEXT]

    def main_image_id(self) -> int:
        for n in self.nodes:
            if n.is_main_image:
                return n.node_id
        raise NoImage(f"graph {self.page_id} has no main image node")

    def node(self, node_id: int) -> DomNode:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNode(f"node {node_id} not in graph {self.page_id}")
        return self.nodes[node_id]

    def adjacency_lists(self) -> list[list[int]]:
        adj = [[] for _ in self.nodes]
        for parent, child in self.edges:
            adj[parent].append(child)
            adj[child].append(parent)
        return adj


def graph_distance(graph: DomGraph, a: int, b: int) -> int:
    """Length of the unique undirected tree path between two nodes."""
    graph.node(a), graph.node(b)
    if a == b:
        return 0
    adj = getattr(graph, "_adj_cache", None)
    if adj is None:
        adj = graph.adjacency_lists()
        graph._adj_cache = adj
    dist = {a: 0}
    frontier = [a]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    if v == b:
                        return dist[v]
                    nxt.append(v)
        frontier = nxt
    raise UnknownNode(f"nodes {a} and {b} are not connected")


def build_graph(tree: Element, image: Element, reference_text: str,
                reference_source: str, page_id: str = "") -> DomGraph:
    """Turn the pruned tree into a DomGraph.

    The winning reference source is excised so the proxy task cannot be
    solved by copying: a figcaption element is replaced by a single
    reference-holder node (structure kept, text hidden); alt/title are
    attributes and simply never become nodes. Other candidates stay.
    """
    excised = _caption_of(image) if reference_source == SOURCE_FIGCAPTION else None

    nodes: list[DomNode] = []
    edges: list[tuple[int, int]] = []
    anchor_elements: dict[str, int] = {}

    def visit(el: Element, parent_id: int | None):
        if el is excised:
            nid = len(nodes)
            nodes.append(DomNode(nid, el.tag, tag_group(el.tag),
                                 KIND_REFERENCE_HOLDER))
            if parent_id is not None:
                edges.append((parent_id, nid))
            return
        nid = len(nodes)
        kind = KIND_IMAGE if el.tag == "img" else KIND_ELEMENT
        nodes.append(DomNode(nid, el.tag, tag_group(el.tag), kind,
                             is_main_image=el is image))
        if parent_id is not None:
            edges.append((parent_id, nid))
        anchor = el.attrs.get(ANCHOR_ATTR)
        if anchor and anchor not in anchor_elements:
            anchor_elements[anchor] = nid
        for child in el.children:
            if isinstance(child, TextLeaf):
                text = normalize_text(child.content)
                if len(text) >= MIN_TEXT_CHARS:
                    tid = len(nodes)
                    nodes.append(DomNode(tid, "#text", TEXT_GROUP,
                                         KIND_TEXT, text=text))
                    edges.append((nid, tid))
            elif isinstance(child, Element):
                visit(child, nid)

    visit(tree, None)

    # Anchors resolve to the first text node (document order = node id
    # order) inside the anchored element's subtree.
    anchors: dict[str, int] = {}
    if anchor_elements:
        children = [[] for _ in nodes]
        for parent, child in edges:
            children[parent].append(child)
        for name, element_id in anchor_elements.items():
            stack = [element_id]
            best = None
            while stack:
                cur = stack.pop()
                if nodes[cur].kind == KIND_TEXT and (best is None or cur < best):
                    best = cur
                stack.extend(children[cur])
            if best is not None:
                anchors[name] = best

    return DomGraph(page_id=page_id, nodes=nodes, edges=edges,
                    reference_text=reference_text,
                    reference_source=reference_source,
                    anchors=anchors)


def document_title(tree: Element) -> str | None:
    """Text of the first <title> element in the full document, if any."""
    el = tree.find("title")
    if el is None:
        return None
    text = subtree_text(el)
    return text or None


def preprocess_page(record: PageRecord, denylist=DEFAULT_DENYLIST) -> DomGraph:
    """Full per-page pipeline: parse, select content root, prune, pick the
    main image, extract the reference text and build the graph."""
    tree = parse_html(record.html)
    title = document_title(tree)
    content = select_content_root(tree)
    pruned = prune_tree(content, denylist)
    image = select_main_image(pruned)
    reference_text, reference_source = extract_reference_text(image, pruned)
    graph = build_graph(pruned, image, reference_text, reference_source,
                        page_id=record.page_id)
    graph.site_id = record.site_id
    graph.title = title
    return graph


# --------------------------------------------------------------------------
# Corpus and graph-file I/O
# --------------------------------------------------------------------------

def read_manifest(path) -> list[tuple[str, str, str]]:
    """Manifest rows: page_id, site_id, url (tab-separated UTF-8)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"bad manifest row: {line!r}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def graph_to_record(graph: DomGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        entry = {
            "node_id": n.node_id,
            "raw_tag": n.raw_tag,
            "tag_group": n.tag_group,
            "kind": n.kind,
        }
        if n.kind == KIND_TEXT:
            entry["text"] = n.text
        entry["is_main_image"] = n.is_main_image
        nodes.append(entry)
    return {
        "page_id": graph.page_id,
        "site_id": graph.site_id,
        "title": graph.title,
        "reference_text": graph.reference_text,
        "reference_source": graph.reference_source,
        "anchors": graph.anchors,
        "nodes": nodes,
        "edges": [[p, c] for p, c in graph.edges],
    }


def record_to_graph(record: dict) -> DomGraph:
    nodes = [
        DomNode(
            node_id=n["node_id"],
            raw_tag=n["raw_tag"],
            tag_group=n["tag_group"],
            kind=n["kind"],
            text=n.get("text"),
            is_main_image=n["is_main_image"],
        )
        for n in record["nodes"]
    ]
    return DomGraph(
        page_id=record["page_id"],
        nodes=nodes,
        edges=[(p, c) for p, c in record["edges"]],
        reference_text=record["reference_text"],
        reference_source=record["reference_source"],
        site_id=record.get("site_id", ""),
        title=record.get("title"),
        anchors={k: int(v) for k, v in record.get("anchors", {}).items()},
    )


def dump_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_graphs(graphs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(dump_record(graph_to_record(g)) + "\n")


def iter_graphs(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_to_graph(json.loads(line))


def read_graphs(path) -> list[DomGraph]:
    return list(iter_graphs(path))


def load_corpus_page(corpus_dir, page_id) -> bytes:
    return (Path(corpus_dir) / f"{page_id}.html").read_bytes()
